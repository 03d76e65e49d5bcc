// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "smatch/datasets.hpp"

namespace smatch {
namespace {

using nlohmann::json;

json side_to_json(const KeypointSet& k, const std::string& image) {
  json j;
  j["size"] = {k.height, k.width};
  json pts = json::array();
  for (const Point& p : k.points) pts.push_back({p.x, p.y});
  j["keypoints"] = std::move(pts);
  if (!k.visible.empty()) {
    json vis = json::array();
    for (bool v : k.visible) vis.push_back(v ? 1 : 0);
    j["visible"] = std::move(vis);
  }
  if (k.bbox) j["bbox"] = {k.bbox->x0, k.bbox->y0, k.bbox->x1, k.bbox->y1};
  if (!image.empty()) j["image"] = image;
  return j;
}

KeypointSet side_from_json(const json& j, std::string* image) {
  KeypointSet k;
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2) throw InputError("'size' must be [H, W]");
  k.height = size[0].get<std::size_t>();
  k.width = size[1].get<std::size_t>();
  for (const auto& p : j.at("keypoints")) {
    if (!p.is_array() || p.size() != 2) throw InputError("each keypoint must be [x, y]");
    k.points.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  if (auto it = j.find("visible"); it != j.end())
    for (const auto& v : *it) k.visible.push_back(v.is_boolean() ? v.get<bool>() : v.get<int>() != 0);
  if (auto it = j.find("bbox"); it != j.end()) {
    if (!it->is_array() || it->size() != 4) throw InputError("'bbox' must be [x0, y0, x1, y1]");
    k.bbox = BBox{(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>(),
                  (*it)[3].get<double>()};
  }
  if (auto it = j.find("image"); it != j.end() && image) *image = it->get<std::string>();
  return k;
}

}  // namespace

void PairAnnotation::validate() const {
  if (src.size() != tgt.size())
    throw InputError("pair '" + pair_id + "' has " + std::to_string(src.size()) + " source and " +
                     std::to_string(tgt.size()) + " target keypoints");
  src.validate();
  tgt.validate();
}

PairAnnotation jointly_visible(const PairAnnotation& a) {
  PairAnnotation out = a;
  const std::size_t n = a.src.size();
  out.src.visible.assign(n, false);
  out.tgt.visible.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const bool v = a.src.is_visible(i) && i < a.tgt.size() && a.tgt.is_visible(i);
    out.src.visible[i] = out.tgt.visible[i] = v;
  }
  return out;
}

std::string annotation_to_json(const PairAnnotation& a) {
  json j;
  j["pair_id"] = a.pair_id;
  j["category"] = a.category;
  j["src"] = side_to_json(a.src, a.src_image);
  j["tgt"] = side_to_json(a.tgt, a.tgt_image);
  return j.dump();
}

PairAnnotation annotation_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    PairAnnotation a;
    a.pair_id = j.value("pair_id", std::string());
    a.category = j.value("category", std::string());
    a.src = side_from_json(j.at("src"), &a.src_image);
    a.tgt = side_from_json(j.at("tgt"), &a.tgt_image);
    a.validate();
    return a;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed annotation record: ") + e.what());
  }
}

void write_annotations(const std::string& path, const std::vector<PairAnnotation>& pairs) {
  std::string text;
  for (const auto& a : pairs) text += annotation_to_json(a) + "\n";
  detail::write_file_atomic(path, text);
}

std::vector<PairAnnotation> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open annotation file '" + path + "'");
  std::vector<PairAnnotation> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(annotation_from_json(line));
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace smatch
