// SPDX-License-Identifier: Apache-2.0
#pragma once

// Coordinate losses, PCK and keypoint-fusion statistics. All of them look at
// visible keypoints only.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "smatch/autodiff.hpp"
#include "smatch/keypoints.hpp"
#include "smatch/matcher.hpp"

namespace smatch {

// Mean Euclidean distance between rows of pred [n,2] and gt [n,2].
ad::Var l2_coord_loss(const ad::Var& pred, const Tensor& gt);
double l2_coord_loss(const std::vector<Point>& pred, const std::vector<Point>& gt);

// Differentiable pixel coordinates (f + 0.5) * stride of a prediction.
ad::Var pixel_coords(const MatchPrediction& pred);

// Per-stride L2 loss in pixels against gt (indexed like the source keypoints,
// rows whose gt point is invisible are dropped). Returns an unrecorded zero
// when no row remains at any stride.
ad::Var stride_loss(const MatchPrediction& pred, const KeypointSet& gt);
// Unit-weight sum of stride_loss over the given strides.
ad::Var multiscale_loss(const std::map<int, MatchPrediction>& preds, const KeypointSet& gt,
                        const std::vector<int>& strides = {16, 8, 4});

enum class PckReference { image, bbox };
const char* reference_name(PckReference r);
PckReference parse_reference(const std::string& name);

struct PckReport {
  double alpha = 0.1;
  PckReference reference = PckReference::image;
  std::vector<double> per_pair_pck;
  std::vector<std::size_t> pair_index;  // pairs with at least one evaluated keypoint
  double aggregate = 0.0;  // correct / total
  std::size_t correct = 0, total = 0;
};

// Threshold alpha * max(H, W) of gt's image or bbox; a keypoint is correct
// when its distance is strictly below it. Keypoint i is evaluated when it is
// visible in both sets. Throws InputError when a bbox reference has no bbox.
PckReport pck(const KeypointSet& pred, const KeypointSet& gt, double alpha, PckReference ref);
PckReport pck(const std::vector<KeypointSet>& pred, const std::vector<KeypointSet>& gt,
              double alpha, PckReference ref);

struct FusionCount {
  std::size_t h = 0, w = 0;
  std::size_t fused = 0, total = 0;
};

struct FusionReport {
  std::size_t height = 0, width = 0;  // input size the annotations were rescaled to
  std::vector<FusionCount> per_resolution;
  // Input pixels per feature cell along x for each entry, when integral.
  int stride(const FusionCount& c) const { return c.w ? int(width / c.w) : 0; }
};

// Keypoint i is fused at a resolution when another visible keypoint of the
// same set lands in its cell (floor(x * w / W), floor(y * h / H)). Sets whose
// image size differs from (height, width) are rescaled first; a point on the
// far image border is assigned to the last cell.
FusionReport fusion_stats(const std::vector<KeypointSet>& annotations, std::size_t height,
                          std::size_t width,
                          const std::vector<std::pair<std::size_t, std::size_t>>& feature_sizes);

}  // namespace smatch
