// SPDX-License-Identifier: Apache-2.0
#include "smatch/reports.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace smatch {
namespace {

using nlohmann::ordered_json;

class KeyValues {
 public:
  explicit KeyValues(const std::string& scope) : prefix_(scope.empty() ? "" : scope + ".") {}
  KeyValues& add(const std::string& key, const std::string& v) {
    out_ << prefix_ << key << '=' << v << '\n';
    return *this;
  }
  KeyValues& add(const std::string& key, double v) { return add(key, format_number(v)); }
  KeyValues& add(const std::string& key, std::uint64_t v) { return add(key, std::to_string(v)); }
  std::string str() const { return out_.str(); }

 private:
  std::string prefix_;
  std::ostringstream out_;
};

std::string line(const ordered_json& j) { return j.dump() + "\n"; }

}  // namespace

std::string format_number(double v) { return ordered_json(v).dump(); }

std::string report_text(const PckReport& r, const std::string& scope) {
  KeyValues kv(scope);
  kv.add("alpha", r.alpha).add("reference", reference_name(r.reference));
  kv.add("correct", std::uint64_t(r.correct)).add("total", std::uint64_t(r.total));
  kv.add("pairs", std::uint64_t(r.per_pair_pck.size())).add("aggregate", r.aggregate);
  return kv.str();
}

std::string report_text(const FusionReport& r, const std::string& scope) {
  KeyValues kv(scope);
  kv.add("input", std::to_string(r.height) + "x" + std::to_string(r.width));
  for (const FusionCount& c : r.per_resolution) {
    const std::string key = std::to_string(c.h) + "x" + std::to_string(c.w);
    kv.add(key + ".stride", std::uint64_t(r.stride(c)));
    kv.add(key + ".fused", std::uint64_t(c.fused)).add(key + ".total", std::uint64_t(c.total));
  }
  return kv.str();
}

std::string report_text(const MemoryReport& r, const std::string& scope) {
  KeyValues kv(scope);
  kv.add("label", r.label).add("mode", mode_name(r.mode));
  kv.add("n", std::uint64_t(r.n)).add("map", std::to_string(r.map_h) + "x" + std::to_string(r.map_w));
  kv.add("k", std::uint64_t(r.k)).add("window_cells_valid", r.window_cells_valid);
  kv.add("tape_elements", r.tape_elements).add("records", r.records).add("peak_bytes", r.peak_bytes);
  for (const auto& [phase, n] : r.breakdown) kv.add("phase." + phase, n);
  return kv.str();
}

std::string report_text(const EpochLog& l, const std::string& scope) {
  KeyValues kv(scope);
  kv.add("index", std::uint64_t(l.epoch)).add("mean_loss", l.mean_loss).add("lr", l.lr);
  if (l.pck >= 0.0) kv.add("val_pck", l.pck);
  return kv.str();
}

std::string report_records(const PckReport& r, const std::vector<std::string>& pair_ids) {
  std::string out;
  for (std::size_t i = 0; i < r.per_pair_pck.size(); ++i) {
    const std::size_t idx = i < r.pair_index.size() ? r.pair_index[i] : i;
    ordered_json j;
    j["record"] = "pck_pair";
    j["pair"] = idx < pair_ids.size() ? ordered_json(pair_ids[idx]) : ordered_json(idx);
    j["alpha"] = r.alpha;
    j["reference"] = reference_name(r.reference);
    j["pck"] = r.per_pair_pck[i];
    out += line(j);
  }
  ordered_json j;
  j["record"] = "pck";
  j["alpha"] = r.alpha;
  j["reference"] = reference_name(r.reference);
  j["correct"] = r.correct;
  j["total"] = r.total;
  j["aggregate"] = r.aggregate;
  return out + line(j);
}

std::string report_records(const FusionReport& r) {
  std::string out;
  for (const FusionCount& c : r.per_resolution) {
    ordered_json j;
    j["record"] = "fusion";
    j["input"] = {r.height, r.width};
    j["feature"] = {c.h, c.w};
    j["stride"] = r.stride(c);
    j["fused"] = c.fused;
    j["total"] = c.total;
    out += line(j);
  }
  return out;
}

std::string report_records(const MemoryReport& r) {
  ordered_json j;
  j["record"] = "memory";
  j["label"] = r.label;
  j["mode"] = mode_name(r.mode);
  j["n"] = r.n;
  j["map"] = {r.map_h, r.map_w};
  j["k"] = r.k;
  j["window_cells_valid"] = r.window_cells_valid;
  j["tape_elements"] = r.tape_elements;
  j["records"] = r.records;
  j["peak_bytes"] = r.peak_bytes;
  j["breakdown"] = ordered_json::object();
  for (const auto& [phase, n] : r.breakdown) j["breakdown"][phase] = n;
  return line(j);
}

std::string report_records(const EpochLog& l) {
  ordered_json j;
  j["record"] = "epoch";
  j["epoch"] = l.epoch;
  j["mean_loss"] = l.mean_loss;
  j["lr"] = l.lr;
  j["val_pck"] = l.pck >= 0.0 ? ordered_json(l.pck) : ordered_json(nullptr);
  return line(j);
}

std::string memory_table(const std::vector<MemoryReport>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %14s %14s %14s %14s\n", "config", "similarity", "windows",
                "tape_elements", "peak_bytes");
  out += buf;
  for (const MemoryReport& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %14llu %14llu %14llu %14llu\n", mode_name(r.mode),
                  (unsigned long long)r.phase("similarity"), (unsigned long long)r.phase("windows"),
                  (unsigned long long)r.tape_elements, (unsigned long long)r.peak_bytes);
    out += buf;
  }
  if (rows.size() >= 2) {
    const MemoryReport& a = rows.front();
    const MemoryReport& b = rows.back();
    std::snprintf(buf, sizeof buf, "ratio %s vs %s: peak_bytes %.4f, tape_elements %.4f\n",
                  mode_name(b.mode), mode_name(a.mode),
                  a.peak_bytes ? reduction_ratio(a, b) : 0.0,
                  a.tape_elements ? element_reduction(a, b) : 0.0);
    out += buf;
  }
  return out;
}

}  // namespace smatch
