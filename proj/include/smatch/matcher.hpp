// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sparse keypoint matching and window-based coarse-to-fine localization.
//
// Feature coordinates: cell (x, y) of a stride-s map covers image pixels
// [s*x, s*x + s) horizontally, so a keypoint maps to (floor(x/s), floor(y/s))
// and a feature coordinate f maps back to the pixel (f + 0.5) * s.

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "smatch/autodiff.hpp"
#include "smatch/keypoints.hpp"
#include "smatch/net.hpp"

namespace smatch {

inline constexpr double kMaskedScore = -1e9;
inline constexpr double kDefaultTemperature = 0.05;
inline constexpr std::size_t kDefaultWindow = 45;

struct Cell {
  std::ptrdiff_t x = 0, y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct SimilarityMatrix {
  ad::Var scores;  // [n, h*w]
  std::size_t h = 0, w = 0;
  int stride = 1;
  std::size_t rows() const { return scores.shape().at(0); }
};

struct WindowScores {
  ad::Var windows;  // [n, k, k], masked cells hold kMaskedScore
  std::vector<Cell> origins;
  std::vector<std::uint8_t> valid_mask;  // n*k*k, 1 = in bounds
  std::size_t k = 0;
};

struct MatchPrediction {
  std::vector<std::size_t> keypoints;  // index into the KeypointSet per row
  std::vector<Cell> coarse;
  std::vector<Cell> origins;
  ad::Var offset;  // [n, 2] window coordinates (x', y')
  ad::Var final_coords;  // [n, 2] feature coordinates
  std::size_t k = 0;  // 0: localized over the whole map
  int stride = 1;

  std::size_t size() const noexcept { return coarse.size(); }
  std::vector<Point> final_points() const;  // feature coordinates
  std::vector<Point> pixel_points() const;
};

inline double feature_to_pixel(double f, int stride) { return (f + 0.5) * stride; }
inline std::ptrdiff_t window_half_lo(std::size_t k) {
  return static_cast<std::ptrdiff_t>(k == 0 ? 0 : (k - 1) / 2);
}

// Linear cell index y*w + x of each visible keypoint. Throws InputError naming
// the keypoint index when a mapped cell falls outside the h x w map.
std::vector<std::size_t> keypoint_cells(const KeypointSet& kps, int stride, std::size_t h,
                                        std::size_t w);

// Rows follow kps.visible_indices().
ad::Var gather_keypoint_features(const ad::Var& fmap, const KeypointSet& kps, int stride);
ad::Var flatten_target(const ad::Var& fmap);

// Per-row L2 normalization of both operands, then Fp * Ft^T. Zero rows score 0.
SimilarityMatrix cosine_similarity(const ad::Var& fp, const ad::Var& ft_flat, std::size_t h,
                                   std::size_t w, int stride);

// Argmax per row, lowest linear index on ties, decoded as (j mod w, j div w).
std::vector<Cell> coarse_localize(const SimilarityMatrix& s);
std::vector<Cell> coarse_localize(const Tensor& scores, std::size_t w);

WindowScores extract_window(const SimilarityMatrix& s, const std::vector<Cell>& coarse,
                            std::size_t k);
ad::Var soft_argmax_offset(const WindowScores& win, double temperature);
// final = coarse - floor((k-1)/2) + offset per axis.
MatchPrediction compose_prediction(const std::vector<Cell>& coarse, const ad::Var& offset,
                                   std::size_t k);

enum class MatchMode {
  // n x M similarity unrecorded for the argmax, k x k windows recomputed on the tape.
  sparse_plus_window,
  // n x M similarity on the tape, soft-argmax over the whole map.
  sparse_only,
  // M x M similarity on the tape, keypoint rows picked from it.
  dense_baseline,
};

const char* mode_name(MatchMode mode);
MatchMode parse_mode(const std::string& name);

struct MatchOptions {
  std::size_t k = kDefaultWindow;
  double temperature = kDefaultTemperature;
  MatchMode mode = MatchMode::sparse_plus_window;
  std::vector<int> strides{16, 8, 4};
  std::uint64_t dense_element_budget = std::uint64_t{1} << 28;
};

MatchPrediction match_at_stride(const ad::Var& src_map, const ad::Var& tgt_map,
                                const KeypointSet& kps, int stride, const MatchOptions& opt);
std::map<int, MatchPrediction> match_pyramid(const FeaturePyramid& src, const FeaturePyramid& tgt,
                                             const KeypointSet& kps, const MatchOptions& opt);

// Full [M, M] cosine matrix between every source and target position.
// Throws ResourceError with the element count when M*M exceeds the budget.
ad::Var dense_match_baseline(const ad::Var& fs, const ad::Var& ft,
                             std::uint64_t element_budget = std::uint64_t{1} << 28);

}  // namespace smatch
