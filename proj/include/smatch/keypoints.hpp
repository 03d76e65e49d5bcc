// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace smatch {

struct Point {
  double x = 0.0, y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
};

// Keypoints in continuous image-pixel coordinates: pixel (i, j) covers
// [j, j+1) x [i, i+1), so a visible point satisfies 0 <= x < width.
struct KeypointSet {
  std::vector<Point> points;
  std::vector<bool> visible;  // empty means all visible
  std::size_t height = 0, width = 0;
  std::optional<BBox> bbox;

  std::size_t size() const noexcept { return points.size(); }
  bool is_visible(std::size_t i) const { return visible.empty() || visible.at(i); }
  std::vector<std::size_t> visible_indices() const;
  std::size_t visible_count() const;

  // Throws InputError on misaligned visibility or an out-of-image visible point.
  void validate() const;

  // Maps coordinates and bbox onto an image of the given size.
  KeypointSet rescaled(std::size_t new_height, std::size_t new_width) const;
};

}  // namespace smatch
