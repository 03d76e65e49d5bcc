// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "smatch/datasets.hpp"

namespace smatch {
namespace fs = std::filesystem;
namespace {

using nlohmann::json;

std::vector<Point> points_from(const json& arr) {
  std::vector<Point> out;
  for (const auto& p : arr) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

PairAnnotation rescale(PairAnnotation a, const LoadOptions& opt) {
  if (opt.input_height && opt.input_width) {
    a.src = a.src.rescaled(opt.input_height, opt.input_width);
    a.tgt = a.tgt.rescaled(opt.input_height, opt.input_width);
  }
  return a;
}

PairAnnotation spair_record(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open '" + file.string() + "'");
  try {
    const json j = json::parse(in);
    PairAnnotation a;
    a.pair_id = file.stem().string();
    a.category = j.at("category").get<std::string>();
    a.src_image = j.value("src_imname", std::string());
    a.tgt_image = j.value("trg_imname", std::string());
    a.src.points = points_from(j.at("src_kps"));
    a.tgt.points = points_from(j.at("trg_kps"));
    const auto& ss = j.at("src_imsize");
    const auto& ts = j.at("trg_imsize");
    a.src.width = ss.at(0).get<std::size_t>();
    a.src.height = ss.at(1).get<std::size_t>();
    a.tgt.width = ts.at(0).get<std::size_t>();
    a.tgt.height = ts.at(1).get<std::size_t>();
    auto box = [](const json& b) {
      return BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    };
    if (j.contains("src_bndbox")) a.src.bbox = box(j["src_bndbox"]);
    if (j.contains("trg_bndbox")) a.tgt.bbox = box(j["trg_bndbox"]);
    if (a.src.size() != a.tgt.size()) throw InputError("source and target keypoint counts differ");
    return a;
  } catch (const json::exception& e) {
    throw InputError("malformed SPair annotation '" + file.string() + "': " + e.what());
  } catch (const InputError& e) {
    throw InputError("'" + file.string() + "': " + e.what());
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) out.emplace_back();
    else if (c != '\r') out.back() += c;
  }
  return out;
}

std::vector<double> numbers(const std::string& field, const std::string& where) {
  std::vector<double> out;
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw InputError(where + ": bad coordinate '" + tok + "'");
    }
  }
  return out;
}

fs::path find_image(const fs::path& root, const std::string& rel) {
  for (const fs::path& p : {root / rel, root / "JPEGImages" / fs::path(rel).filename()})
    if (fs::exists(p)) return p;
  throw InputError("image '" + rel + "' not found under '" + root.string() + "'");
}

std::vector<PairAnnotation> load_pfpascal(const fs::path& root, const LoadOptions& opt) {
  const fs::path csv = root / (std::string(split_name(opt.split)) + "_pairs.csv");
  std::ifstream in(csv);
  if (!in) throw InputError("cannot open '" + csv.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError("'" + csv.string() + "' is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("'" + csv.string() + "' lacks column " + name);
    return std::size_t(it - header.begin());
  };
  const std::size_t c_src = column("source_image"), c_tgt = column("target_image"),
                    c_cls = column("class"), c_xa = column("XA"), c_ya = column("YA"),
                    c_xb = column("XB"), c_yb = column("YB");
  std::vector<PairAnnotation> out;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = csv.string() + ":" + std::to_string(no);
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) throw InputError(where + ": expected " + std::to_string(header.size()) + " fields");
    PairAnnotation a;
    a.pair_id = std::to_string(out.size());
    a.category = f[c_cls];
    a.src_image = f[c_src];
    a.tgt_image = f[c_tgt];
    const auto xa = numbers(f[c_xa], where), ya = numbers(f[c_ya], where);
    const auto xb = numbers(f[c_xb], where), yb = numbers(f[c_yb], where);
    if (xa.size() != ya.size() || xb.size() != yb.size() || xa.size() != xb.size())
      throw InputError(where + ": coordinate lists differ in length");
    for (std::size_t i = 0; i < xa.size(); ++i) {
      a.src.points.push_back({xa[i], ya[i]});
      a.tgt.points.push_back({xb[i], yb[i]});
    }
    std::tie(a.src.width, a.src.height) = jpeg_size(find_image(root, a.src_image).string());
    std::tie(a.tgt.width, a.tgt.height) = jpeg_size(find_image(root, a.tgt_image).string());
    out.push_back(rescale(std::move(a), opt));
  }
  return out;
}

}  // namespace

Dialect parse_dialect(const std::string& name) {
  if (name == "spair") return Dialect::spair;
  if (name == "pfpascal") return Dialect::pfpascal;
  throw InputError("unknown dialect '" + name + "' (expected spair or pfpascal)");
}

Split parse_split(const std::string& name) {
  if (name == "trn") return Split::trn;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InputError("unknown split '" + name + "' (expected trn, val or test)");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::trn: return "trn";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::pair<std::size_t, std::size_t> jpeg_size(const std::string& path) {
  const std::vector<unsigned char> b = detail::read_file(path);
  auto fail = [&](const std::string& why) -> std::pair<std::size_t, std::size_t> {
    throw InputError("'" + path + "': " + why);
  };
  if (b.size() < 4 || b[0] != 0xFF || b[1] != 0xD8) return fail("not a JPEG file");
  std::size_t i = 2;
  while (i + 4 <= b.size()) {
    if (b[i] != 0xFF) return fail("corrupt JPEG marker stream");
    while (i < b.size() && b[i] == 0xFF) ++i;
    if (i >= b.size()) break;
    const unsigned m = b[i++];
    if (m == 0xD8 || m == 0x01 || (m >= 0xD0 && m <= 0xD7)) continue;
    if (i + 2 > b.size()) break;
    const std::size_t len = std::size_t(b[i]) << 8 | b[i + 1];
    const bool sof = m >= 0xC0 && m <= 0xCF && m != 0xC4 && m != 0xC8 && m != 0xCC;
    if (sof) {
      if (i + 7 > b.size()) break;
      const std::size_t h = std::size_t(b[i + 3]) << 8 | b[i + 4];
      const std::size_t w = std::size_t(b[i + 5]) << 8 | b[i + 6];
      if (w == 0 || h == 0) return fail("JPEG frame header has a zero dimension");
      return {w, h};
    }
    if (m == 0xD9 || m == 0xDA) break;
    i += len;
  }
  return fail("no JPEG frame header found");
}

std::vector<PairAnnotation> load_benchmark_pairs(const std::string& root, Dialect dialect,
                                                 const LoadOptions& opt) {
  const fs::path r(root);
  if (!fs::is_directory(r)) throw InputError("dataset root '" + root + "' does not exist");
  if (dialect == Dialect::pfpascal) return load_pfpascal(r, opt);

  const fs::path dir = r / "PairAnnotation" / split_name(opt.split);
  if (!fs::is_directory(dir)) throw InputError("annotation directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<PairAnnotation> out;
  for (const auto& f : files) out.push_back(rescale(spair_record(f), opt));
  return out;
}

}  // namespace smatch
