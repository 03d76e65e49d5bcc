// SPDX-License-Identifier: Apache-2.0
#include "smatch/matcher.hpp"

#include <cmath>
#include <new>
#include <string>

#include "smatch/errors.hpp"
#include "smatch/ops.hpp"

namespace smatch {
namespace {

struct WindowLayout {
  std::vector<Cell> origins;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> positions;  // into the n*k*k window tensor
  std::vector<ad::RowPair> pairs;  // (keypoint row, target cell) per valid position
};

WindowLayout window_layout(const std::vector<Cell>& coarse, std::size_t k, std::size_t h,
                           std::size_t w) {
  if (k == 0) throw ContractError("window size must be >= 1");
  WindowLayout L;
  const std::ptrdiff_t half = window_half_lo(k);
  const auto kk = static_cast<std::ptrdiff_t>(k);
  L.mask.assign(coarse.size() * k * k, 0);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const Cell o{coarse[i].x - half, coarse[i].y - half};
    L.origins.push_back(o);
    for (std::ptrdiff_t wy = 0; wy < kk; ++wy)
      for (std::ptrdiff_t wx = 0; wx < kk; ++wx) {
        const std::ptrdiff_t fx = o.x + wx, fy = o.y + wy;
        if (fx < 0 || fy < 0 || fx >= std::ptrdiff_t(w) || fy >= std::ptrdiff_t(h)) continue;
        const std::size_t pos = (i * k + std::size_t(wy)) * k + std::size_t(wx);
        L.mask[pos] = 1;
        L.positions.push_back(pos);
        L.pairs.push_back({i, std::size_t(fy) * w + std::size_t(fx)});
      }
  }
  return L;
}

Tensor cells_tensor(const std::vector<Cell>& cells, std::ptrdiff_t minus, DType dtype) {
  std::vector<double> v;
  v.reserve(cells.size() * 2);
  for (const Cell& c : cells) {
    v.push_back(double(c.x - minus));
    v.push_back(double(c.y - minus));
  }
  return Tensor({cells.size(), 2}, std::move(v), dtype);
}

void check_map(const ad::Var& m, const char* what) {
  if (m.shape().size() != 3)
    throw DimensionError(std::string(what) + " must be [C,h,w], got " + shape_string(m.shape()));
}

ad::Var guarded_similarity(const ad::Var& a, const ad::Var& b, std::uint64_t budget) {
  const std::uint64_t n = a.shape()[0], m = b.shape()[0];
  if (n * m > budget)
    throw ResourceError("dense similarity exceeds the element budget of " + std::to_string(budget),
                        n * m);
  try {
    return ad::matmul_nt(a, b);
  } catch (const std::bad_alloc&) {
    throw ResourceError("allocation of the dense similarity failed", n * m);
  }
}

// Prediction from a soft-argmax over each keypoint's whole score map.
MatchPrediction global_prediction(const ad::Var& rows, std::size_t h, std::size_t w,
                                  double temperature) {
  MatchPrediction p;
  p.coarse = coarse_localize(rows.value(), w);
  p.origins.assign(p.coarse.size(), Cell{});
  p.offset = ad::masked_soft_argmax(rows, p.coarse.size(), h, w, {}, temperature);
  p.final_coords = p.offset;
  return p;
}

}  // namespace

std::vector<Point> MatchPrediction::final_points() const {
  std::vector<Point> out;
  const Tensor& t = final_coords.value();
  for (std::size_t i = 0; i < size(); ++i) out.push_back({t[2 * i], t[2 * i + 1]});
  return out;
}

std::vector<Point> MatchPrediction::pixel_points() const {
  std::vector<Point> out = final_points();
  for (Point& p : out) p = {feature_to_pixel(p.x, stride), feature_to_pixel(p.y, stride)};
  return out;
}

std::vector<std::size_t> keypoint_cells(const KeypointSet& kps, int stride, std::size_t h,
                                        std::size_t w) {
  if (stride < 1) throw ContractError("stride must be positive");
  std::vector<std::size_t> cells;
  for (std::size_t i : kps.visible_indices()) {
    const Point& p = kps.points[i];
    const double fx = std::floor(p.x / stride), fy = std::floor(p.y / stride);
    if (!(fx >= 0 && fy >= 0 && fx < double(w) && fy < double(h)))
      throw InputError("keypoint " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                       std::to_string(p.y) + ") maps outside the " + std::to_string(w) + "x" +
                       std::to_string(h) + " stride-" + std::to_string(stride) + " map");
    cells.push_back(std::size_t(fy) * w + std::size_t(fx));
  }
  return cells;
}

ad::Var gather_keypoint_features(const ad::Var& fmap, const KeypointSet& kps, int stride) {
  check_map(fmap, "feature map");
  return ad::gather_cells(fmap, keypoint_cells(kps, stride, fmap.shape()[1], fmap.shape()[2]));
}

ad::Var flatten_target(const ad::Var& fmap) {
  check_map(fmap, "feature map");
  return ad::flatten_spatial(fmap);
}

SimilarityMatrix cosine_similarity(const ad::Var& fp, const ad::Var& ft_flat, std::size_t h,
                                   std::size_t w, int stride) {
  if (ft_flat.shape().size() != 2 || ft_flat.shape()[0] != h * w)
    throw DimensionError("target descriptors " + shape_string(ft_flat.shape()) +
                         " do not match a " + std::to_string(h) + "x" + std::to_string(w) + " map");
  return {ad::matmul_nt(ad::row_normalize(fp), ad::row_normalize(ft_flat)), h, w, stride};
}

std::vector<Cell> coarse_localize(const Tensor& scores, std::size_t w) {
  if (scores.ndim() != 2) throw DimensionError("scores must be [n, M]");
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  if (m == 0 || w == 0) throw ContractError("cannot localize on an empty map");
  std::vector<Cell> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.data() + i * m;
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (row[j] > row[best]) best = j;
    out.push_back({std::ptrdiff_t(best % w), std::ptrdiff_t(best / w)});
  }
  return out;
}

std::vector<Cell> coarse_localize(const SimilarityMatrix& s) {
  return coarse_localize(s.scores.value(), s.w);
}

WindowScores extract_window(const SimilarityMatrix& s, const std::vector<Cell>& coarse,
                            std::size_t k) {
  const std::size_t n = s.rows(), m = s.h * s.w;
  if (coarse.size() != n) throw DimensionError("one coarse cell per similarity row required");
  WindowLayout L = window_layout(coarse, k, s.h, s.w);
  std::vector<std::size_t> flat;
  flat.reserve(L.pairs.size());
  for (const auto& pr : L.pairs) flat.push_back(pr.a_row * m + pr.b_row);
  const ad::Var compact =
      ad::gather_rows(ad::reshape(s.scores, {n * m, 1}), flat, {flat.size()});
  return {ad::scatter(compact, L.positions, {n, k, k}, kMaskedScore), std::move(L.origins),
          std::move(L.mask), k};
}

ad::Var soft_argmax_offset(const WindowScores& win, double temperature) {
  const std::size_t n = win.origins.size();
  return ad::masked_soft_argmax(win.windows, n, win.k, win.k, win.valid_mask, temperature);
}

MatchPrediction compose_prediction(const std::vector<Cell>& coarse, const ad::Var& offset,
                                   std::size_t k) {
  if (offset.shape() != Shape{coarse.size(), 2})
    throw DimensionError("offsets must be [n, 2] for n coarse cells");
  const std::ptrdiff_t half = window_half_lo(k);
  MatchPrediction p;
  p.coarse = coarse;
  for (const Cell& c : coarse) p.origins.push_back({c.x - half, c.y - half});
  p.offset = offset;
  p.final_coords = ad::affine(offset, 1.0, cells_tensor(coarse, half, offset.dtype()));
  p.k = k;
  return p;
}

const char* mode_name(MatchMode mode) {
  switch (mode) {
    case MatchMode::sparse_plus_window: return "sparse_plus_window";
    case MatchMode::sparse_only: return "sparse_only";
    case MatchMode::dense_baseline: return "dense_baseline";
  }
  return "?";
}

MatchMode parse_mode(const std::string& name) {
  for (MatchMode m : {MatchMode::sparse_plus_window, MatchMode::sparse_only, MatchMode::dense_baseline})
    if (name == mode_name(m)) return m;
  throw InputError("unknown match mode '" + name + "'");
}

MatchPrediction match_at_stride(const ad::Var& src_map, const ad::Var& tgt_map,
                                const KeypointSet& kps, int stride, const MatchOptions& opt) {
  check_map(src_map, "source map");
  check_map(tgt_map, "target map");
  if (src_map.shape() != tgt_map.shape())
    throw DimensionError("source " + shape_string(src_map.shape()) + " and target " +
                         shape_string(tgt_map.shape()) + " maps differ");
  const std::size_t h = tgt_map.shape()[1], w = tgt_map.shape()[2];
  const std::vector<std::size_t> cells = keypoint_cells(kps, stride, h, w);
  const std::size_t n = cells.size();

  MatchPrediction p;
  if (n == 0) {
    p.offset = p.final_coords = ad::Var::constant(Tensor({0, 2}, tgt_map.dtype()));
    p.k = opt.mode == MatchMode::sparse_plus_window ? opt.k : 0;
  } else if (opt.mode == MatchMode::dense_baseline) {
    ad::Var a, b;
    {
      ad::PhaseScope phase("descriptors");
      a = ad::row_normalize(ad::flatten_spatial(src_map));
      b = ad::row_normalize(ad::flatten_spatial(tgt_map));
    }
    ad::Var dense;
    {
      ad::PhaseScope phase("similarity");
      dense = guarded_similarity(a, b, opt.dense_element_budget);
    }
    ad::PhaseScope phase("windows");
    p = global_prediction(ad::gather_rows(dense, cells, {n, h * w}), h, w, opt.temperature);
  } else {
    ad::Var a, b;
    {
      ad::PhaseScope phase("descriptors");
      a = ad::row_normalize(ad::gather_cells(src_map, cells));
      b = ad::row_normalize(ad::flatten_spatial(tgt_map));
    }
    if (opt.mode == MatchMode::sparse_only) {
      ad::Var s;
      {
        ad::PhaseScope phase("similarity");
        s = ad::matmul_nt(a, b);
      }
      ad::PhaseScope phase("windows");
      p = global_prediction(s, h, w, opt.temperature);
    } else {
      std::vector<Cell> coarse;
      {
        ad::TapeScope off(false);
        coarse = coarse_localize(ad::matmul_nt(a, b).value(), w);
      }
      WindowLayout L = window_layout(coarse, opt.k, h, w);
      ad::Var compact;
      {
        ad::PhaseScope phase("similarity");
        compact = ad::gather_pair_scores(a, b, L.pairs);
      }
      ad::PhaseScope phase("windows");
      WindowScores win{ad::scatter(compact, L.positions, {n, opt.k, opt.k}, kMaskedScore),
                       std::move(L.origins), std::move(L.mask), opt.k};
      p = compose_prediction(coarse, soft_argmax_offset(win, opt.temperature), opt.k);
    }
  }
  p.keypoints = kps.visible_indices();
  p.stride = stride;
  return p;
}

std::map<int, MatchPrediction> match_pyramid(const FeaturePyramid& src, const FeaturePyramid& tgt,
                                             const KeypointSet& kps, const MatchOptions& opt) {
  if (src.height != tgt.height || src.width != tgt.width)
    throw DimensionError("source and target pyramids have different input sizes");
  std::map<int, MatchPrediction> out;
  for (int s : opt.strides) out.emplace(s, match_at_stride(src.at(s), tgt.at(s), kps, s, opt));
  return out;
}

ad::Var dense_match_baseline(const ad::Var& fs, const ad::Var& ft, std::uint64_t element_budget) {
  check_map(fs, "source map");
  check_map(ft, "target map");
  if (fs.shape() != ft.shape()) throw DimensionError("dense matching needs equal map shapes");
  const std::uint64_t m = fs.shape()[1] * fs.shape()[2];
  if (m * m > element_budget)
    throw ResourceError("dense similarity exceeds the element budget of " +
                            std::to_string(element_budget),
                        m * m);
  return guarded_similarity(ad::row_normalize(ad::flatten_spatial(fs)),
                            ad::row_normalize(ad::flatten_spatial(ft)), element_budget);
}

}  // namespace smatch
