// SPDX-License-Identifier: Apache-2.0
#pragma once

// CLI11 config formatter for JSON files. Top-level keys map to global flags,
// nested objects to the subcommand of the same name, arrays to repeated
// values. {"seed": 3, "train": {"epochs": 4, "enc-widths": [8, 16, 32, 32]}}

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace smatch::cli {

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return resolved(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

  // Every configurable long option of app and of its invoked subcommands,
  // with the value it resolved to.
  static nlohmann::json resolved(const CLI::App* app, bool default_also = true) {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      std::vector<std::string> values = opt->results();
      if (values.empty()) {
        if (!default_also) continue;
        values = split_default(opt->get_default_str());
      }
      if (opt->get_expected_max() > 1 || values.size() > 1) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& v : values) arr.push_back(scalar(v));
        j[name] = std::move(arr);
      } else if (values.empty()) {
        j[name] = opt->get_expected_min() == 0 ? nlohmann::json(false) : nlohmann::json("");
      } else {
        j[name] = scalar(values.front());
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = resolved(sub, default_also);
    return j;
  }

 private:
  static nlohmann::json scalar(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    if (!s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' || s[0] == '.')) {
      std::istringstream in(s);
      double d;
      if (in >> d && in.peek() == std::char_traits<char>::eof()) {
        if (s.find_first_of(".eE") == std::string::npos) {
          if (s[0] == '-') return std::stoll(s);
          return std::stoull(s);
        }
        return d;
      }
    }
    return s;
  }

  static std::vector<std::string> split_default(const std::string& s) {
    if (s.empty()) return {};
    if (s.front() != '[' || s.back() != ']') return {s};
    std::vector<std::string> out;
    std::stringstream in(s.substr(1, s.size() - 2));
    for (std::string item; std::getline(in, item, ',');) out.push_back(item);
    return out;
  }

  static std::string text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void collect(const nlohmann::json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(text(v));
      } else {
        item.inputs.push_back(text(value));
      }
      items.push_back(std::move(item));
    }
  }
};

}  // namespace smatch::cli
