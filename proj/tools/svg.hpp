// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "smatch/datasets.hpp"
#include "smatch/tensor.hpp"

namespace smatch::cli {

enum class LineStatus { neutral, correct, wrong };

struct PlotLine {
  std::size_t keypoint = 0;
  Point src, pred;
  LineStatus status = LineStatus::neutral;
  Point gt;  // meaningful unless status is neutral
};

// One line per keypoint visible in the prediction. With ground truth, a line
// is correct when the prediction lies strictly within 0.1 * max(H, W) of the
// target keypoint (PCK@0.1, image reference).
std::vector<PlotLine> plot_lines(const PairAnnotation& ann, const KeypointSet& pred, bool use_gt);

// Source and target panels side by side, each a coarse grey mosaic of its
// [3, H, W] image, with one <line> per entry from the source keypoint to its
// prediction in the target panel.
std::string match_svg(const Tensor& src, const Tensor& tgt, const std::vector<PlotLine>& lines);

}  // namespace smatch::cli
