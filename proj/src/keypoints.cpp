// SPDX-License-Identifier: Apache-2.0
#include "smatch/keypoints.hpp"

#include <cmath>
#include <string>

#include "smatch/errors.hpp"

namespace smatch {

std::vector<std::size_t> KeypointSet::visible_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (is_visible(i)) idx.push_back(i);
  return idx;
}

std::size_t KeypointSet::visible_count() const { return visible_indices().size(); }

void KeypointSet::validate() const {
  if (!visible.empty() && visible.size() != points.size())
    throw InputError("visibility mask has " + std::to_string(visible.size()) + " entries for " +
                     std::to_string(points.size()) + " keypoints");
  if (height == 0 || width == 0) throw InputError("keypoint set has no image size");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_visible(i)) continue;
    const Point& p = points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.y < 0 ||
        p.x >= double(width) || p.y >= double(height))
      throw InputError("keypoint " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                       std::to_string(p.y) + ") lies outside the " + std::to_string(width) + "x" +
                       std::to_string(height) + " image");
  }
}

KeypointSet KeypointSet::rescaled(std::size_t new_height, std::size_t new_width) const {
  if (height == 0 || width == 0 || new_height == 0 || new_width == 0)
    throw InputError("cannot rescale between empty image sizes");
  const double sx = double(new_width) / double(width), sy = double(new_height) / double(height);
  KeypointSet out = *this;
  out.height = new_height;
  out.width = new_width;
  for (Point& p : out.points) p = {p.x * sx, p.y * sy};
  if (bbox) out.bbox = BBox{bbox->x0 * sx, bbox->y0 * sy, bbox->x1 * sx, bbox->y1 * sy};
  return out;
}

}  // namespace smatch
