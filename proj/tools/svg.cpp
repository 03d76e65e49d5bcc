// SPDX-License-Identifier: Apache-2.0
#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace smatch::cli {
namespace {

constexpr std::size_t kMosaic = 32;
constexpr double kGap = 16.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Mosaic {
  std::size_t rows, cols;
  double cell_h, cell_w;
  std::vector<double> grey;
};

Mosaic mosaic(const Tensor& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Mosaic m{std::min(kMosaic, h), std::min(kMosaic, w), 0, 0, {}};
  m.cell_h = double(h) / double(m.rows);
  m.cell_w = double(w) / double(m.cols);
  m.grey.assign(m.rows * m.cols, 0.0);
  std::vector<std::size_t> count(m.grey.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cell = (y * m.rows / h) * m.cols + x * m.cols / w;
        m.grey[cell] += img[(ch * h + y) * w + x];
        ++count[cell];
      }
  for (std::size_t i = 0; i < m.grey.size(); ++i) m.grey[i] /= double(count[i]);
  return m;
}

void panel(std::string& out, const Mosaic& m, double x0, double lo, double hi) {
  const double span = hi > lo ? hi - lo : 1.0;
  out += "<g shape-rendering=\"crispEdges\">\n";
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const int g = int(std::clamp((m.grey[r * m.cols + c] - lo) / span, 0.0, 1.0) * 255.0 + 0.5);
      char fill[8];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", g, g, g);
      out += "<rect x=\"" + num(x0 + double(c) * m.cell_w) + "\" y=\"" + num(double(r) * m.cell_h) +
             "\" width=\"" + num(m.cell_w) + "\" height=\"" + num(m.cell_h) + "\" fill=\"" + fill +
             "\"/>\n";
    }
  out += "</g>\n";
}

const char* colour(LineStatus s) {
  switch (s) {
    case LineStatus::correct: return "#1a9850";
    case LineStatus::wrong: return "#d73027";
    case LineStatus::neutral: break;
  }
  return "#3288bd";
}

}  // namespace

std::vector<PlotLine> plot_lines(const PairAnnotation& ann, const KeypointSet& pred, bool use_gt) {
  const double threshold = 0.1 * double(std::max(ann.tgt.height, ann.tgt.width));
  std::vector<PlotLine> lines;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.is_visible(i)) continue;
    PlotLine l{i, ann.src.points.at(i), pred.points[i], LineStatus::neutral, {}};
    if (use_gt && ann.tgt.is_visible(i)) {
      l.gt = ann.tgt.points[i];
      l.status = std::hypot(l.pred.x - l.gt.x, l.pred.y - l.gt.y) < threshold ? LineStatus::correct
                                                                              : LineStatus::wrong;
    }
    lines.push_back(l);
  }
  return lines;
}

std::string match_svg(const Tensor& src, const Tensor& tgt, const std::vector<PlotLine>& lines) {
  const Mosaic ms = mosaic(src), mt = mosaic(tgt);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Mosaic* m : {&ms, &mt})
    for (double g : m->grey) lo = std::min(lo, g), hi = std::max(hi, g);
  const double sw = double(src.dim(2)), tx = sw + kGap;
  const double width = tx + double(tgt.dim(2));
  const double height = double(std::max(src.dim(1), tgt.dim(1)));

  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
         num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  panel(out, ms, 0.0, lo, hi);
  panel(out, mt, tx, lo, hi);
  out += "<g stroke-width=\"1\" fill=\"none\">\n";
  for (const PlotLine& l : lines)
    out += "<line x1=\"" + num(l.src.x) + "\" y1=\"" + num(l.src.y) + "\" x2=\"" +
           num(tx + l.pred.x) + "\" y2=\"" + num(l.pred.y) + "\" stroke=\"" + colour(l.status) +
           "\"/>\n";
  out += "</g>\n<g stroke=\"#ffffff\" stroke-width=\"0.5\">\n";
  for (const PlotLine& l : lines) {
    out += "<circle cx=\"" + num(l.src.x) + "\" cy=\"" + num(l.src.y) + "\" r=\"1.5\" fill=\"" +
           colour(l.status) + "\"/>\n";
    out += "<circle cx=\"" + num(tx + l.pred.x) + "\" cy=\"" + num(l.pred.y) + "\" r=\"1.5\" fill=\"" +
           colour(l.status) + "\"/>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace smatch::cli
