// SPDX-License-Identifier: Apache-2.0
#include "smatch/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "smatch/errors.hpp"
#include "smatch/ops.hpp"

namespace smatch {

ad::Var l2_coord_loss(const ad::Var& pred, const Tensor& gt) {
  if (pred.shape().size() != 2 || pred.shape()[1] != 2 || gt.shape() != pred.shape())
    throw ContractError("l2_coord_loss needs matching [n, 2] coordinates, got " +
                        shape_string(pred.shape()) + " and " + shape_string(gt.shape()));
  return ad::mean_distance(pred, gt);
}

double l2_coord_loss(const std::vector<Point>& pred, const std::vector<Point>& gt) {
  if (pred.size() != gt.size())
    throw ContractError("l2_coord_loss needs equal lengths, got " + std::to_string(pred.size()) +
                        " and " + std::to_string(gt.size()));
  if (pred.empty()) throw ContractError("l2_coord_loss of zero keypoints");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return s / double(pred.size());
}

ad::Var pixel_coords(const MatchPrediction& pred) {
  const double s = pred.stride;
  return ad::affine(pred.final_coords, s,
                    Tensor::full(pred.final_coords.shape(), 0.5 * s, pred.final_coords.dtype()));
}

ad::Var stride_loss(const MatchPrediction& pred, const KeypointSet& gt) {
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t kp = pred.keypoints.at(i);
    if (kp >= gt.size()) throw ContractError("prediction refers to keypoint " + std::to_string(kp) +
                                             " beyond the ground truth");
    if (!gt.is_visible(kp)) continue;
    rows.push_back(i);
    target.push_back(gt.points[kp].x);
    target.push_back(gt.points[kp].y);
  }
  const DType dt = pred.final_coords.dtype();
  if (rows.empty()) return ad::Var::constant(Tensor::scalar(0.0, dt));
  ad::Var px = pixel_coords(pred);
  if (rows.size() != pred.size()) px = ad::gather_rows(px, rows, {rows.size(), 2});
  return l2_coord_loss(px, Tensor({rows.size(), 2}, std::move(target), dt));
}

ad::Var multiscale_loss(const std::map<int, MatchPrediction>& preds, const KeypointSet& gt,
                        const std::vector<int>& strides) {
  if (strides.empty()) throw ContractError("multiscale_loss needs at least one stride");
  ad::Var total;
  for (int s : strides) {
    auto it = preds.find(s);
    if (it == preds.end()) throw ContractError("no prediction at stride " + std::to_string(s));
    ad::Var l = stride_loss(it->second, gt);
    total = total.node() ? ad::add(total, l) : l;
  }
  return total;
}

const char* reference_name(PckReference r) { return r == PckReference::bbox ? "bbox" : "image"; }

PckReference parse_reference(const std::string& name) {
  if (name == "image") return PckReference::image;
  if (name == "bbox") return PckReference::bbox;
  throw InputError("unknown PCK reference '" + name + "' (expected image or bbox)");
}

PckReport pck(const std::vector<KeypointSet>& pred, const std::vector<KeypointSet>& gt,
              double alpha, PckReference ref) {
  if (pred.size() != gt.size())
    throw ContractError("pck needs one prediction per ground-truth pair");
  if (!(alpha > 0)) throw ContractError("pck alpha must be positive");
  PckReport r;
  r.alpha = alpha;
  r.reference = ref;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const KeypointSet& g = gt[p];
    const KeypointSet& q = pred[p];
    if (q.size() != g.size())
      throw ContractError("pair " + std::to_string(p) + ": " + std::to_string(q.size()) +
                          " predictions for " + std::to_string(g.size()) + " keypoints");
    double extent;
    if (ref == PckReference::bbox) {
      if (!g.bbox) throw InputError("pair " + std::to_string(p) + " has no bounding box");
      extent = std::max(g.bbox->width(), g.bbox->height());
    } else {
      extent = double(std::max(g.height, g.width));
    }
    const double threshold = alpha * extent;
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.is_visible(i) || !q.is_visible(i)) continue;
      ++total;
      if (std::hypot(q.points[i].x - g.points[i].x, q.points[i].y - g.points[i].y) < threshold)
        ++correct;
    }
    if (total == 0) continue;
    r.per_pair_pck.push_back(double(correct) / double(total));
    r.pair_index.push_back(p);
    r.correct += correct;
    r.total += total;
  }
  r.aggregate = r.total ? double(r.correct) / double(r.total) : 0.0;
  return r;
}

PckReport pck(const KeypointSet& pred, const KeypointSet& gt, double alpha, PckReference ref) {
  return pck(std::vector<KeypointSet>{pred}, std::vector<KeypointSet>{gt}, alpha, ref);
}

FusionReport fusion_stats(const std::vector<KeypointSet>& annotations, std::size_t height,
                          std::size_t width,
                          const std::vector<std::pair<std::size_t, std::size_t>>& feature_sizes) {
  if (height == 0 || width == 0) throw ContractError("fusion_stats needs a positive input size");
  FusionReport r;
  r.height = height;
  r.width = width;
  for (auto [h, w] : feature_sizes) {
    if (h == 0 || w == 0) throw ContractError("feature sizes must be positive");
    r.per_resolution.push_back({h, w, 0, 0});
  }
  std::vector<std::size_t> cells;
  for (const KeypointSet& raw : annotations) {
    const KeypointSet k =
        (raw.height == height && raw.width == width) ? raw : raw.rescaled(height, width);
    const std::vector<std::size_t> vis = k.visible_indices();
    for (FusionCount& c : r.per_resolution) {
      cells.clear();
      for (std::size_t i : vis) {
        auto bucket = [](double v, std::size_t n, std::size_t N) {
          const double f = std::floor(v * double(n) / double(N));
          return std::size_t(std::clamp(f, 0.0, double(n - 1)));
        };
        cells.push_back(bucket(k.points[i].y, c.h, height) * c.w + bucket(k.points[i].x, c.w, width));
      }
      std::vector<std::size_t> sorted = cells;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t cell : cells) {
        auto [lo, hi] = std::equal_range(sorted.begin(), sorted.end(), cell);
        if (hi - lo > 1) ++c.fused;
      }
      c.total += cells.size();
    }
  }
  return r;
}

}  // namespace smatch
