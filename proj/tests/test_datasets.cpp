// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "smatch/datasets.hpp"
#include "smatch/errors.hpp"
#include "smatch/matcher.hpp"
#include "smatch/metrics.hpp"

using namespace smatch;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("smatch_ds_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

// Minimal JPEG: SOI, an APP0 segment, a baseline frame header, EOI.
std::vector<unsigned char> tiny_jpeg(unsigned w, unsigned h) {
  std::vector<unsigned char> b{0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10};
  for (int i = 0; i < 14; ++i) b.push_back(0);
  for (unsigned v : {0xFFu, 0xC0u, 0x00u, 0x11u, 0x08u, h >> 8, h & 0xFF, w >> 8, w & 0xFF, 0x03u})
    b.push_back(static_cast<unsigned char>(v));
  for (int i = 0; i < 9; ++i) b.push_back(1);
  b.push_back(0xFF);
  b.push_back(0xD9);
  return b;
}

}  // namespace

TEST_CASE("SMTF round trip") {
  const fs::path dir = scratch("smtf");
  const std::vector<Shape> shapes{{}, {7}, {2, 3}, {2, 1, 4}, {3, 2, 2, 5}};
  for (DType dt : {DType::f32, DType::f64})
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      Tensor t = oracle::random_tensor(shapes[i], 10 + i, -1e3, 1e3, dt);
      std::vector<double> v(t.values().begin(), t.values().end());
      v[0] = -0.0;
      if (v.size() > 1) v[1] = std::numeric_limits<double>::infinity();
      t = Tensor(t.shape(), v, dt);
      const auto path = (dir / "t.smtf").string();
      write_tensor(path, t);
      const Tensor back = read_tensor(path);
      CHECK(back.dtype() == dt);
      CHECK(back.bitwise_equal(t));
      CHECK(std::signbit(back[0]));
    }
  SUBCASE("header arithmetic") {
    const auto bytes = encode_tensor(Tensor({2, 3}, DType::f32));
    CHECK(bytes.size() == 26 + 6 * 4);
    CHECK(bytes[8] == 1);
    CHECK(bytes[9] == 2);
    CHECK(bytes[10] == 2);
    CHECK(bytes[18] == 3);
    CHECK(encode_tensor(Tensor({2, 3}, DType::f64)).size() == 26 + 6 * 8);
  }
  SUBCASE("empty dimension rejected at write") {
    CHECK_THROWS_AS(write_tensor((dir / "e.smtf").string(), Tensor({2, 0})), ContractError);
    CHECK_FALSE(fs::exists(dir / "e.smtf"));
  }
  SUBCASE("malformed files carry the byte offset") {
    auto good = encode_tensor(Tensor({2, 3}, DType::f32));
    auto expect = [](std::vector<unsigned char> b, std::uint64_t offset) {
      try {
        decode_tensor(std::move(b));
        FAIL("expected FormatError");
      } catch (const FormatError& e) {
        CHECK(e.offset() == offset);
      }
    };
    auto bad = good;
    bad[0] = 'X';
    expect(bad, 0);
    bad = good;
    bad[4] = 2;
    expect(bad, 4);
    bad = good;
    bad[8] = 7;
    expect(bad, 8);
    expect(std::vector<unsigned char>(good.begin(), good.begin() + 20), 18);
    expect(std::vector<unsigned char>(good.begin(), good.end() - 1), 26);
    bad = good;
    bad.push_back(0);
    expect(bad, 50);
    CHECK_THROWS_AS(read_tensor((dir / "missing.smtf").string()), InputError);
  }
}

TEST_CASE("annotation records") {
  PairAnnotation a;
  a.pair_id = "p1";
  a.category = "cat";
  a.src.height = 100;
  a.src.width = 120;
  a.src.points = {{1.25, 2.5}, {100.1, 50}};
  a.src.visible = {true, false};
  a.src.bbox = BBox{1, 2, 110, 90};
  a.tgt = a.src;
  a.tgt.points = {{3, 4}, {5, 6}};
  a.tgt.bbox.reset();
  a.src_image = "a.smtf";
  const PairAnnotation b = annotation_from_json(annotation_to_json(a));
  CHECK(b.pair_id == "p1");
  CHECK(b.src.points == a.src.points);
  CHECK(b.src.visible == a.src.visible);
  CHECK(b.src.bbox->x1 == 110);
  CHECK_FALSE(b.tgt.bbox.has_value());
  CHECK(b.src_image == "a.smtf");
  CHECK(b.tgt_image.empty());

  const fs::path dir = scratch("ann");
  write_annotations((dir / "a.jsonl").string(), {a, a});
  CHECK(read_annotations((dir / "a.jsonl").string()).size() == 2);
  std::ofstream((dir / "bad.jsonl").string()) << annotation_to_json(a) << "\n{\"src\": 3}\n";
  try {
    read_annotations((dir / "bad.jsonl").string());
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
  PairAnnotation c = a;
  c.tgt.points.pop_back();
  c.tgt.visible.pop_back();
  CHECK_THROWS_AS(annotation_from_json(annotation_to_json(c)), InputError);

  const PairAnnotation j = jointly_visible(a);
  CHECK(j.tgt.visible == std::vector<bool>{true, false});
}

TEST_CASE("keypoint rescaling") {
  KeypointSet k;
  k.width = 512;
  k.height = 384;
  k.points = {{100, 300}, {511.5, 0.25}};
  k.bbox = BBox{10, 30, 400, 330};
  const KeypointSet r = k.rescaled(256, 256);
  CHECK(r.points[0].x == 50.0);
  CHECK(r.points[0].y == doctest::Approx(200.0).epsilon(1e-15));
  CHECK(r.bbox->y1 == doctest::Approx(220.0).epsilon(1e-15));
  const KeypointSet back = r.rescaled(384, 512);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(back.points[i].x - k.points[i].x) < 1e-9);
    CHECK(std::abs(back.points[i].y - k.points[i].y) < 1e-9);
  }
}

TEST_CASE("synthetic feature pairs") {
  SyntheticSpec spec;
  spec.seed = 5;
  spec.n_keypoints = 12;
  spec.collision_rate = 0.5;
  spec.height = spec.width = 64;

  SUBCASE("deterministic") {
    const auto a = generate_feature_pair(spec), b = generate_feature_pair(spec);
    for (int s : kPyramidStrides)
      CHECK(encode_tensor(a.src.at(s).value()) == encode_tensor(b.src.at(s).value()));
    CHECK(annotation_to_json(a.annotation) == annotation_to_json(b.annotation));
    spec.seed = 6;
    CHECK(encode_tensor(generate_feature_pair(spec).tgt.at(4).value()) != encode_tensor(a.tgt.at(4).value()));
  }
  SUBCASE("collision rate controls stride-16 fusion") {
    for (double rate : {0.0, 0.25, 0.5, 1.0}) {
      spec.collision_rate = rate;
      const auto p = generate_feature_pair(spec);
      const auto rep = fusion_stats({p.annotation.src}, 64, 64, {{4, 4}, {16, 16}});
      const double want = std::max(rate * 12 == 1 ? 2.0 : std::round(rate * 12), 0.0);
      CHECK(rep.per_resolution[0].fused == std::size_t(want));
      CHECK(rep.per_resolution[1].fused == 0);  // distinct stride-4 cells
    }
  }
  SUBCASE("planted cell is the cosine nearest neighbour") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      spec.seed = seed;
      spec.noise_sigma = 0.3;
      const auto p = generate_feature_pair(spec);
      const Tensor& s = p.src.at(4).value();
      const Tensor& t = p.tgt.at(4).value();
      const std::size_t D = s.dim(0), w = s.dim(2), M = s.dim(1) * w;
      for (std::size_t i = 0; i < spec.n_keypoints; ++i) {
        const Point kp = p.annotation.src.points[i];
        const std::size_t cell = std::size_t(kp.y / 4) * w + std::size_t(kp.x / 4);
        std::size_t best = 0;
        double best_cos = -2;
        for (std::size_t j = 0; j < M; ++j) {
          double ab = 0, aa = 0, bb = 0;
          for (std::size_t c = 0; c < D; ++c) {
            ab += s[c * M + cell] * t[c * M + j];
            aa += s[c * M + cell] * s[c * M + cell];
            bb += t[c * M + j] * t[c * M + j];
          }
          const double cs = ab / std::sqrt(aa * bb);
          if (cs > best_cos) best_cos = cs, best = j;
        }
        CHECK(best == p.planted_cells[i]);
      }
    }
  }
  SUBCASE("noise-free matcher recovers every planted cell at stride 4") {
    spec.noise_sigma = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      spec.seed = 100 + seed;
      const auto p = generate_feature_pair(spec);
      MatchOptions opt;
      opt.k = 5;
      const auto m = match_pyramid(p.src, p.tgt, p.annotation.src, opt);
      const auto px = m.at(4).pixel_points();
      for (std::size_t i = 0; i < spec.n_keypoints; ++i) {
        const std::size_t w = 16;
        CHECK(m.at(4).coarse[i] == Cell{std::ptrdiff_t(p.planted_cells[i] % w), std::ptrdiff_t(p.planted_cells[i] / w)});
        CHECK(std::abs(px[i].x - p.annotation.tgt.points[i].x) < 2.0);
        CHECK(std::abs(px[i].y - p.annotation.tgt.points[i].y) < 2.0);
      }
    }
  }
  SUBCASE("infeasible specs") {
    spec.n_keypoints = 1;
    spec.collision_rate = 1.0;
    CHECK_THROWS_AS(generate_feature_pair(spec), InputError);
    spec.n_keypoints = 20;
    spec.collision_rate = 0.0;  // 20 singles, 16 stride-16 cells
    CHECK_THROWS_AS(generate_feature_pair(spec), InputError);
    spec.height = 40;
    CHECK_THROWS_AS(generate_feature_pair(spec), InputError);
  }
}

TEST_CASE("synthetic image pairs") {
  SyntheticSpec spec;
  spec.seed = 9;
  spec.height = 64;
  spec.width = 48;
  spec.n_keypoints = 6;
  spec.collision_rate = 0.3;
  spec.noise_sigma = 0.0;
  const ImagePair p = generate_image_pair(spec);
  CHECK(p.src.shape() == Shape{3, 64, 48});
  CHECK(p.src.dtype() == DType::f32);
  p.annotation.validate();
  for (std::size_t i = 0; i < spec.n_keypoints; ++i) {
    const Point s = p.annotation.src.points[i], t = p.annotation.tgt.points[i];
    CHECK(s.x - std::floor(s.x) == doctest::Approx(t.x - std::floor(t.x)).epsilon(1e-9));
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(p.src.at({c, std::size_t(s.y), std::size_t(s.x)}) == p.tgt.at({c, std::size_t(t.y), std::size_t(t.x)}));
  }
  CHECK(encode_tensor(generate_image_pair(spec).tgt) == encode_tensor(p.tgt));

  const fs::path dir = scratch("imgs");
  const auto set = generate_image_dataset(spec, 3);
  write_image_dataset(dir.string(), set);
  const auto back = read_image_dataset(dir.string());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].src.bitwise_equal(set[i].src));
    CHECK(back[i].annotation.tgt.points == set[i].annotation.tgt.points);
  }
  CHECK_FALSE(set[0].src.bitwise_equal(set[1].src));
  fs::resize_file(dir / "pair_00001_tgt.smtf", 40);
  CHECK_THROWS_AS(read_image_dataset(dir.string()), InputError);
}

TEST_CASE("benchmark adapters") {
  CHECK_THROWS_AS(load_benchmark_pairs("/nonexistent/spair", Dialect::spair), InputError);

  SUBCASE("spair dialect") {
    const fs::path root = scratch("spair");
    fs::create_directories(root / "PairAnnotation" / "test");
    std::ofstream(root / "PairAnnotation" / "test" / "000001-a-b:cat.json")
        << R"({"category":"cat","src_imname":"a.jpg","trg_imname":"b.jpg",
              "src_kps":[[256,192],[10,20]],"trg_kps":[[0,0],[100,100]],
              "src_bndbox":[0,0,512,384],"trg_bndbox":[10,10,200,200],
              "src_imsize":[512,384,3],"trg_imsize":[256,256,3]})";
    const auto pairs = load_benchmark_pairs(root.string(), Dialect::spair);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].src.points[0].x == 128.0);
    CHECK(pairs[0].src.points[0].y == doctest::Approx(128.0).epsilon(1e-15));
    CHECK(pairs[0].src.bbox->y1 == doctest::Approx(256.0).epsilon(1e-15));
    CHECK(pairs[0].tgt.points[1] == Point{100, 100});
    CHECK(pairs[0].category == "cat");
    LoadOptions native;
    native.input_height = native.input_width = 0;
    CHECK(load_benchmark_pairs(root.string(), Dialect::spair, native)[0].src.width == 512);
    std::ofstream(root / "PairAnnotation" / "test" / "000002.json") << "{broken";
    try {
      load_benchmark_pairs(root.string(), Dialect::spair);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("000002.json") != std::string::npos);
    }
  }
  SUBCASE("pfpascal dialect") {
    const fs::path root = scratch("pfpascal");
    fs::create_directories(root / "JPEGImages");
    spit(root / "JPEGImages" / "a.jpg", tiny_jpeg(500, 375));
    spit(root / "JPEGImages" / "b.jpg", tiny_jpeg(300, 200));
    std::ofstream(root / "test_pairs.csv") << "source_image,target_image,class,XA,YA,XB,YB\n"
                                              "JPEGImages/a.jpg,JPEGImages/b.jpg,3,100;250,75;150,30;60,20;40\n";
    CHECK(jpeg_size((root / "JPEGImages" / "a.jpg").string()) == std::pair<std::size_t, std::size_t>{500, 375});
    const auto pairs = load_benchmark_pairs(root.string(), Dialect::pfpascal);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].src.size() == 2);
    CHECK(pairs[0].src.points[1].x == doctest::Approx(128.0).epsilon(1e-12));
    CHECK(pairs[0].tgt.points[0].y == doctest::Approx(25.6).epsilon(1e-12));
    CHECK(pairs[0].category == "3");
    spit(root / "JPEGImages" / "b.jpg", {0x00, 0x01});
    CHECK_THROWS_AS(load_benchmark_pairs(root.string(), Dialect::pfpascal), InputError);
  }
}
