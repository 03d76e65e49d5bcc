// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "smatch/errors.hpp"
#include "smatch/matcher.hpp"
#include "smatch/ops.hpp"

using namespace smatch;
using ad::Var;

namespace {

KeypointSet random_keypoints(std::size_t n, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  KeypointSet k;
  k.height = H;
  k.width = W;
  for (std::size_t i = 0; i < n; ++i) k.points.push_back({rng.uniform(0, double(W)), rng.uniform(0, double(H))});
  return k;
}

double cosine(const double* a, const double* b, std::size_t c) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < c; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

SimilarityMatrix score_matrix(const Tensor& t, std::size_t h, std::size_t w) {
  return {Var::leaf(t), h, w, 1};
}

}  // namespace

TEST_CASE("gather_keypoint_features") {
  const Tensor f = oracle::random_tensor({3, 16, 16}, 1);
  KeypointSet k;
  k.height = k.width = 256;
  k.points = {{0, 0}, {255, 255}, {17.9, 40.2}};
  const auto cells = keypoint_cells(k, 16, 16, 16);
  CHECK(cells == std::vector<std::size_t>{0, 15 * 16 + 15, 2 * 16 + 1});
  auto rows = gather_keypoint_features(Var::constant(f), k, 16).value();
  REQUIRE(rows.shape() == Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(rows.at({i, c}) == f[c * 256 + cells[i]]);

  SUBCASE("random index oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor g = oracle::random_tensor({4, 8, 6}, 10 + seed);
      const KeypointSet kp = random_keypoints(7, 32, 24, 20 + seed);
      auto r = gather_keypoint_features(Var::constant(g), kp, 4).value();
      for (std::size_t i = 0; i < 7; ++i) {
        const auto x = std::size_t(kp.points[i].x / 4), y = std::size_t(kp.points[i].y / 4);
        for (std::size_t c = 0; c < 4; ++c) CHECK(r.at({i, c}) == g.at({c, y, x}));
      }
    }
  }
  SUBCASE("invisible points are skipped") {
    k.visible = {true, false, true};
    CHECK(gather_keypoint_features(Var::constant(f), k, 16).shape() == Shape{2, 3});
  }
  SUBCASE("out of bounds names the keypoint") {
    k.points.push_back({300, 10});
    try {
      gather_keypoint_features(Var::constant(f), k, 16);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("keypoint 3") != std::string::npos);
    }
  }
}

TEST_CASE("flatten_target") {
  CHECK(flatten_target(Var::constant(Tensor({5, 1, 1}))).shape() == Shape{1, 5});
  const Tensor f = oracle::random_tensor({3, 8, 8}, 2);
  const Tensor flat = flatten_target(Var::constant(f)).value();
  for (std::size_t c = 0; c < 3; ++c) CHECK(flat.at({37, c}) == f.at({c, 4, 5}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) CHECK(flat.at({y * 8 + x, c}) == f.at({c, y, x}));
}

TEST_CASE("cosine_similarity") {
  SUBCASE("parallel, orthogonal, zero rows") {
    const Tensor a({3, 3}, {1, 2, 3, 1, 0, 0, 0, 0, 0});
    const Tensor b({2, 3}, {3, 6, 9, 0, 1, 0});
    auto s = cosine_similarity(Var::constant(a), Var::constant(b), 1, 2, 1).scores.value();
    CHECK(s.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.at({1, 1}) == 0.0);
    CHECK(s.at({2, 0}) == 0.0);
    CHECK(s.at({2, 1}) == 0.0);
  }
  SUBCASE("per-pair oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor a = oracle::random_tensor({5, 8}, 30 + seed), b = oracle::random_tensor({12, 8}, 60 + seed);
      auto s = cosine_similarity(Var::constant(a), Var::constant(b), 3, 4, 1).scores.value();
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 12; ++j) {
          const double want = cosine(a.data() + 8 * i, b.data() + 8 * j, 8);
          CHECK(std::abs(s.at({i, j}) - want) < 1e-6);
          CHECK(std::abs(s.at({i, j})) <= 1.0 + 1e-5);
        }
    }
  }
  SUBCASE("scale invariance") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor a = oracle::random_tensor({6, 5}, 90 + seed), b = oracle::random_tensor({16, 5}, 120 + seed);
      std::vector<double> scaled(a.values().begin(), a.values().end());
      Rng rng(seed);
      for (std::size_t i = 0; i < 6; ++i) {
        const double c = rng.uniform(0.01, 100.0);
        for (std::size_t j = 0; j < 5; ++j) scaled[i * 5 + j] *= c;
      }
      auto s1 = cosine_similarity(Var::constant(a), Var::constant(b), 4, 4, 1);
      auto s2 = cosine_similarity(Var::constant(Tensor({6, 5}, scaled)), Var::constant(b), 4, 4, 1);
      CHECK(oracle::max_rel_diff(s1.scores.value().values(), s2.scores.value().values()) < 1e-6);
      CHECK(coarse_localize(s1) == coarse_localize(s2));
    }
  }
}

TEST_CASE("coarse_localize") {
  std::vector<double> v(64, 0.0);
  v[37] = 1.0;
  CHECK(coarse_localize(Tensor({1, 64}, v), 8) == std::vector<Cell>{{5, 4}});
  CHECK(coarse_localize(Tensor::full({1, 64}, 0.3), 8) == std::vector<Cell>{{0, 0}});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor s = oracle::random_tensor({4, 35}, 200 + seed);
    const auto got = coarse_localize(s, 7);
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < 35; ++j)
        if (s.at({i, j}) > s.at({i, best})) best = j;
      CHECK(got[i] == Cell{std::ptrdiff_t(best % 7), std::ptrdiff_t(best / 7)});
    }
  }
}

TEST_CASE("extract_window") {
  const std::size_t h = 9, w = 11;
  const Tensor s = oracle::random_tensor({1, h * w}, 3);
  const auto S = score_matrix(s, h, w);
  SUBCASE("k=1") {
    auto win = extract_window(S, {{4, 6}}, 1);
    CHECK(win.windows.shape() == Shape{1, 1, 1});
    CHECK(win.valid_mask == std::vector<std::uint8_t>{1});
    CHECK(win.windows.value()[0] == s[6 * w + 4]);
  }
  SUBCASE("corner masks two rows and columns") {
    auto win = extract_window(S, {{0, 0}}, 5);
    CHECK(win.origins[0] == Cell{-2, -2});
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        const bool valid = y >= 2 && x >= 2;
        CHECK(bool(win.valid_mask[y * 5 + x]) == valid);
        CHECK(win.windows.value().at({0, y, x}) == (valid ? s[(y - 2) * w + (x - 2)] : kMaskedScore));
      }
  }
  SUBCASE("interior slice") {
    auto win = extract_window(S, {{5, 4}}, 5);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) CHECK(win.windows.value().at({0, y, x}) == s[(y + 2) * w + (x + 3)]);
  }
  SUBCASE("even k extends further right and down") {
    auto win = extract_window(S, {{5, 4}}, 4);
    CHECK(win.origins[0] == Cell{4, 3});
    CHECK(win.windows.value().at({0, 3, 3}) == s[6 * w + 7]);
  }
}

TEST_CASE("soft_argmax_offset") {
  auto uniform = extract_window(score_matrix(Tensor::full({1, 100}, 0.2), 10, 10), {{5, 5}}, 5);
  auto o = soft_argmax_offset(uniform, 0.05).value();
  CHECK(o[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(o[1] == doctest::Approx(2.0).epsilon(1e-12));

  auto single = extract_window(score_matrix(Tensor::full({1, 1}, 0.7), 1, 1), {{0, 0}}, 5);
  auto os = soft_argmax_offset(single, 0.05).value();
  CHECK(os[0] == 2.0);
  CHECK(os[1] == 2.0);

  std::vector<double> v(9);
  for (int i = 0; i < 9; ++i) v[std::size_t(i)] = i;
  auto win = extract_window(score_matrix(Tensor({1, 9}, v), 3, 3), {{1, 1}}, 3);
  auto ot = soft_argmax_offset(win, 1.0).value();
  double z = 0, ex = 0, ey = 0;
  for (int i = 0; i < 9; ++i) {
    const double e = std::exp(i - 8.0);
    z += e;
    ex += e * (i % 3);
    ey += e * (i / 3);
  }
  CHECK(std::abs(ot[0] - ex / z) < 1e-6);
  CHECK(std::abs(ot[1] - ey / z) < 1e-6);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor s = oracle::random_tensor({3, 36}, 300 + seed);
    auto wv = extract_window(score_matrix(s, 6, 6), {{0, 0}, {5, 5}, {2, 3}}, 7);
    auto off = soft_argmax_offset(wv, 0.1).value();
    for (double c : off.values()) {
      CHECK(c >= 0.0);
      CHECK(c <= 6.0);
    }
  }
}

TEST_CASE("compose_prediction") {
  auto p = compose_prediction({{10, 12}}, Var::constant(Tensor({1, 2}, {2, 2})), 5);
  CHECK(p.final_points()[0] == Point{10, 12});
  auto q = compose_prediction({{10, 12}}, Var::constant(Tensor({1, 2}, {3.5, 1.0})), 5);
  CHECK(q.final_points()[0] == Point{11.5, 11.0});
  auto r = compose_prediction({{7, 3}}, Var::constant(Tensor({1, 2}, {0, 0})), 1);
  CHECK(r.final_points()[0] == Point{7, 3});
  for (std::size_t k = 1; k <= 61; k += 2) {
    const double c = double((k - 1) / 2);
    auto id = compose_prediction({{3, 40}, {0, 0}}, Var::constant(Tensor({2, 2}, {c, c, c, c})), k);
    CHECK(id.final_points()[0] == Point{3, 40});
    CHECK(id.final_points()[1] == Point{0, 0});
  }
}

TEST_CASE("window completeness: full-coverage window matches global soft-argmax") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t h = 2 + rng.below(9), w = 2 + rng.below(9);
    const std::size_t k = 2 * std::max(h, w) - 1 + rng.below(3);
    const Tensor s = oracle::random_tensor({1, h * w}, 400 + seed);
    const Cell c{std::ptrdiff_t(rng.below(w)), std::ptrdiff_t(rng.below(h))};
    auto win = extract_window(score_matrix(s, h, w), {c}, k);
    auto pred = compose_prediction({c}, soft_argmax_offset(win, 0.1), k);
    auto global = ad::masked_soft_argmax(Var::constant(s), 1, h, w, {}, 0.1).value();
    CHECK(std::abs(pred.final_points()[0].x - global[0]) < 1e-6);
    CHECK(std::abs(pred.final_points()[0].y - global[1]) < 1e-6);
  }
}

TEST_CASE("sparse coarse localization agrees with dense rows") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t hw = (seed % 3 == 0) ? 8 : (seed % 3 == 1 ? 16 : 32);
    const Tensor fs = oracle::random_tensor({6, hw, hw}, 500 + seed);
    const Tensor ft = oracle::random_tensor({6, hw, hw}, 600 + seed);
    const KeypointSet k = random_keypoints(5, hw * 4, hw * 4, 700 + seed);
    auto fp = gather_keypoint_features(Var::constant(fs), k, 4);
    auto S = cosine_similarity(fp, flatten_target(Var::constant(ft)), hw, hw, 4);
    auto D = dense_match_baseline(Var::constant(fs), Var::constant(ft)).value();
    const auto cells = keypoint_cells(k, 4, hw, hw);
    const std::size_t M = hw * hw;
    const auto sparse = coarse_localize(S);
    for (std::size_t i = 0; i < 5; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < M; ++j) {
        CHECK(D[cells[i] * M + j] == S.scores.value().at({i, j}));
        if (D[cells[i] * M + j] > D[cells[i] * M + best]) best = j;
      }
      CHECK(sparse[i] == Cell{std::ptrdiff_t(best % hw), std::ptrdiff_t(best / hw)});
    }
  }
}

TEST_CASE("dense_match_baseline sizes and budget") {
  CHECK(dense_match_baseline(Var::constant(oracle::random_tensor({2, 4, 4}, 1)),
                             Var::constant(oracle::random_tensor({2, 4, 4}, 2)))
            .numel() == 256);
  auto big = dense_match_baseline(Var::constant(oracle::random_tensor({2, 64, 64}, 3)),
                                  Var::constant(oracle::random_tensor({2, 64, 64}, 4)));
  CHECK(big.numel() == 16'777'216);
  try {
    dense_match_baseline(Var::constant(Tensor({1, 64, 64})), Var::constant(Tensor({1, 64, 64})), 1'000'000);
    FAIL("expected ResourceError");
  } catch (const ResourceError& e) {
    CHECK(e.requested_elements() == 16'777'216);
  }
}

TEST_CASE("match_pyramid") {
  SUBCASE("identical features map each keypoint to its own cell") {
    FeaturePyramid p;
    p.height = p.width = 64;
    for (int s : kPyramidStrides)
      p.by_stride[s] = Var::constant(oracle::random_tensor({8, std::size_t(64 / s), std::size_t(64 / s)}, 10 + s));
    const KeypointSet k = random_keypoints(12, 64, 64, 5);
    MatchOptions opt;
    opt.k = 5;
    auto m = match_pyramid(p, p, k, opt);
    REQUIRE(m.size() == 3);
    for (int s : kPyramidStrides) {
      const auto cells = keypoint_cells(k, s, std::size_t(64 / s), std::size_t(64 / s));
      for (std::size_t i = 0; i < k.size(); ++i) {
        const std::size_t w = std::size_t(64 / s);
        CHECK(m[s].coarse[i] == Cell{std::ptrdiff_t(cells[i] % w), std::ptrdiff_t(cells[i] / w)});
      }
    }
  }
  SUBCASE("planted descriptors are recovered at stride 4") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor ft = oracle::random_tensor({16, 16, 16}, 800 + seed);
      Tensor fs = oracle::random_tensor({16, 16, 16}, 900 + seed);
      std::vector<double> src(fs.values().begin(), fs.values().end());
      const KeypointSet k = random_keypoints(10, 64, 64, 1000 + seed);
      Rng rng(seed);
      std::vector<Cell> planted;
      for (std::size_t i = 0; i < k.size(); ++i) {
        const Cell t{std::ptrdiff_t(rng.below(16)), std::ptrdiff_t(rng.below(16))};
        planted.push_back(t);
        const auto sx = std::size_t(k.points[i].x / 4), sy = std::size_t(k.points[i].y / 4);
        for (std::size_t c = 0; c < 16; ++c)
          src[(c * 16 + sy) * 16 + sx] = ft.at({c, std::size_t(t.y), std::size_t(t.x)});
      }
      // Later keypoints may overwrite earlier ones sharing a cell; keep only unique cells.
      MatchOptions opt;
      opt.k = 9;
      auto m = match_at_stride(Var::constant(Tensor({16, 16, 16}, src)), Var::constant(ft), k, 4, opt);
      const auto fin = m.final_points();
      const auto cells = keypoint_cells(k, 4, 16, 16);
      for (std::size_t i = 0; i < k.size(); ++i) {
        bool overwritten = false;
        for (std::size_t j = i + 1; j < k.size(); ++j) overwritten |= cells[j] == cells[i];
        if (overwritten) continue;
        CHECK(std::abs(fin[i].x - double(planted[i].x)) < 0.5);
        CHECK(std::abs(fin[i].y - double(planted[i].y)) < 0.5);
      }
    }
  }
  SUBCASE("coarse and fine strides agree on smooth fields") {
    // Source and target share a smooth field; stride 16 is the 4x4 average of stride 4.
    const std::size_t C = 4, n4 = 32, n16 = 8;
    std::vector<double> f4(C * n4 * n4), f16(C * n16 * n16, 0.0);
    for (std::size_t y = 0; y < n4; ++y)
      for (std::size_t x = 0; x < n4; ++x) {
        const double u = 2.6 * (double(x) + 0.5) / double(n4), v = 2.6 * (double(y) + 0.5) / double(n4);
        const double feat[4] = {std::cos(u), std::sin(u), std::cos(v), std::sin(v)};
        for (std::size_t c = 0; c < C; ++c) {
          f4[(c * n4 + y) * n4 + x] = feat[c];
          f16[(c * n16 + y / 4) * n16 + x / 4] += feat[c] / 16.0;
        }
      }
    FeaturePyramid p;
    p.height = p.width = 128;
    p.by_stride[4] = Var::constant(Tensor({C, n4, n4}, f4));
    p.by_stride[16] = Var::constant(Tensor({C, n16, n16}, f16));
    MatchOptions opt;
    opt.strides = {16, 4};
    opt.k = 7;
    const KeypointSet k = random_keypoints(20, 128, 128, 77);
    auto m = match_pyramid(p, p, k, opt);
    const auto a = m[16].pixel_points(), b = m[4].pixel_points();
    for (std::size_t i = 0; i < k.size(); ++i) {
      CHECK(std::abs(a[i].x - b[i].x) <= 16.0);
      CHECK(std::abs(a[i].y - b[i].y) <= 16.0);
    }
  }
}

TEST_CASE("match modes agree when the window covers the map") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Var fs = Var::leaf(oracle::random_tensor({5, 6, 6}, 1100 + seed));
    const Var ft = Var::leaf(oracle::random_tensor({5, 6, 6}, 1200 + seed));
    const KeypointSet k = random_keypoints(4, 24, 24, 1300 + seed);
    MatchOptions opt;
    opt.k = 11;
    opt.temperature = 0.1;
    std::vector<Tensor> finals, grads;
    for (MatchMode mode : {MatchMode::sparse_plus_window, MatchMode::sparse_only, MatchMode::dense_baseline}) {
      opt.mode = mode;
      auto m = match_at_stride(fs, ft, k, 4, opt);
      finals.push_back(m.final_coords.value());
      ad::backward(ad::sum(m.final_coords));
      grads.push_back(*ft.grad());
    }
    for (std::size_t i = 1; i < 3; ++i) {
      CHECK(oracle::max_rel_diff(finals[i].values(), finals[0].values()) < 1e-9);
      CHECK(oracle::max_rel_diff(grads[i].values(), grads[0].values()) < 1e-9);
    }
  }
}

TEST_CASE("similarity tape elements follow the counting formulas") {
  const std::size_t hw = 12, M = hw * hw, n = 5, k = 7;
  const Var fs = Var::leaf(oracle::random_tensor({3, hw, hw}, 1, -1, 1, DType::f32));
  const Var ft = Var::leaf(oracle::random_tensor({3, hw, hw}, 2, -1, 1, DType::f32));
  KeypointSet kp = random_keypoints(n, hw * 4, hw * 4, 3);
  kp.points[0] = {1, 1};  // forces a clipped window
  auto similarity = [&](MatchMode mode) {
    ad::TapeScope::reset_counters();
    ad::TapeScope on(true);
    MatchOptions opt;
    opt.k = k;
    opt.mode = mode;
    auto m = match_at_stride(fs, ft, kp, 4, opt);
    const auto& by = ad::TapeScope::counters().by_phase;
    auto it = by.find("similarity");
    return std::pair{it == by.end() ? std::uint64_t{0} : it->second, m};
  };
  CHECK(similarity(MatchMode::dense_baseline).first == M * M);
  CHECK(similarity(MatchMode::sparse_only).first == n * M);
  auto [elems, m] = similarity(MatchMode::sparse_plus_window);
  std::uint64_t valid = 0;
  for (const Cell& o : m.origins)
    for (std::ptrdiff_t y = o.y; y < o.y + std::ptrdiff_t(k); ++y)
      for (std::ptrdiff_t x = o.x; x < o.x + std::ptrdiff_t(k); ++x)
        valid += x >= 0 && y >= 0 && x < std::ptrdiff_t(hw) && y < std::ptrdiff_t(hw);
  CHECK(valid < n * k * k);
  CHECK(elems == valid);

  KeypointSet none = kp;
  none.visible.assign(n, false);
  ad::TapeScope::reset_counters();
  MatchOptions opt;
  auto e = match_at_stride(fs, ft, none, 4, opt);
  CHECK(e.size() == 0);
  CHECK(ad::TapeScope::counters().by_phase.count("similarity") == 0);
}

TEST_CASE("gradients through cosine similarity and soft-argmax") {
  const Tensor fs = oracle::random_tensor({4, 5, 5}, 40);
  const KeypointSet k = random_keypoints(3, 20, 20, 41);
  const Tensor target({3, 2}, {1.0, 2.0, 3.5, 0.5, 2.0, 2.0});
  for (MatchMode mode : {MatchMode::sparse_plus_window, MatchMode::sparse_only}) {
    MatchOptions opt;
    opt.k = 3;
    opt.temperature = 0.2;
    opt.mode = mode;
    auto f = [&](const Var& ft) {
      return ad::mean_distance(match_at_stride(Var::constant(fs), ft, k, 4, opt).final_coords, target);
    };
    CHECK(ad::grad_check(f, oracle::random_tensor({4, 5, 5}, 42), 1e-5) < 1e-4);
  }
}
