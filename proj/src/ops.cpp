// SPDX-License-Identifier: Apache-2.0
#include "smatch/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "smatch/errors.hpp"
#include "smatch/kernels.hpp"

namespace smatch::ad {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(x.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result("add", Tensor(a.shape(), std::move(out), a.dtype()), {a, b},
                     [](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
                       for (GradSlot& slot : p) {
                         if (!slot) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) slot.data[i] += g[i];
                       }
                     });
}

Var scale(const Var& x, double factor) {
  return affine(x, factor, Tensor(x.shape(), x.dtype()));
}

Var affine(const Var& x, double factor, const Tensor& shift) {
  if (shift.shape() != x.shape()) {
    throw DimensionError("affine: shift shape " + shape_string(shift.shape()) +
                         " differs from " + shape_string(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.value()[i] + shift[i];
  return make_result("affine", Tensor(x.shape(), std::move(out), x.dtype()), {x},
                     [factor](std::span<const double> g, const Tensor&,
                              std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) p[0].data[i] += factor * g[i];
                     });
}

Var relu(const Var& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  return make_result("relu", Tensor(x.shape(), std::move(out), x.dtype()), {x},
                     [x](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
                       if (!p[0]) return;
                       const double* in = x.value().data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (in[i] > 0.0) p[0].data[i] += g[i];
                       }
                     });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return make_result("reshape", x.value().reshaped(std::move(shape)), {x},
                     [](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) p[0].data[i] += g[i];
                     });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_result("sum", Tensor::scalar(total, x.dtype()), {x},
                     [](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < p[0].size; ++i) p[0].data[i] += g[0];
                     });
}

Var mean(const Var& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 3, "add_channel_bias");
  if (bias.value().ndim() != 1 || bias.shape()[0] != x.shape()[0]) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) +
                         " does not match channels of " + shape_string(x.shape()));
  }
  const std::size_t channels = x.shape()[0];
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  std::vector<double> out(x.value().values().begin(), x.value().values().end());
  for (std::size_t c = 0; c < channels; ++c) {
    const double b = bias.value()[c];
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b;
  }
  return make_result("add_channel_bias", Tensor(x.shape(), std::move(out), x.dtype()),
                     {x, bias},
                     [channels, plane](std::span<const double> g, const Tensor&,
                                       std::span<GradSlot> p) {
                       if (p[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) p[0].data[i] += g[i];
                       }
                       if (p[1]) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
                           p[1].data[c] += acc;
                         }
                       }
                     });
}

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding) {
  const Conv2dGeometry geom = conv2d_geometry(x.shape(), kernel.shape(), stride, padding);
  std::vector<double> out(geom.out_channels * geom.out_h * geom.out_w, 0.0);
  kernels::conv2d_forward(geom, x.value().data(), kernel.value().data(), out.data());
  return make_result(
      "conv2d",
      Tensor({geom.out_channels, geom.out_h, geom.out_w}, std::move(out), x.dtype()),
      {x, kernel},
      [geom, x, kernel](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
        if (p[0]) kernels::conv2d_backward_input(geom, g.data(), kernel.value().data(), p[0].data);
        if (p[1]) kernels::conv2d_backward_kernel(geom, g.data(), x.value().data(), p[1].data);
      });
}

Var transposed_conv2d(const Var& x, const Var& kernel, std::size_t stride,
                      std::size_t padding) {
  Tensor value = smatch::transposed_conv2d(x.value(), kernel.value(), stride, padding);
  // Adjoint geometry: a conv2d from the output back to the input.
  const Conv2dGeometry geom = conv2d_geometry(value.shape(), kernel.shape(), stride, padding);
  return make_result(
      "transposed_conv2d", std::move(value), {x, kernel},
      [geom, x, kernel](std::span<const double> g, const Tensor&, std::span<GradSlot> p) {
        if (p[0]) kernels::conv2d_forward(geom, g.data(), kernel.value().data(), p[0].data);
        if (p[1]) kernels::conv2d_backward_kernel(geom, x.value().data(), g.data(), p[1].data);
      });
}

Var bilinear_resize(const Var& x, std::size_t out_h, std::size_t out_w) {
  Tensor value = smatch::bilinear_resize(x.value(), out_h, out_w);
  const std::size_t c = x.shape()[0], in_h = x.shape()[1], in_w = x.shape()[2];
  return make_result("bilinear_resize", std::move(value), {x},
                     [c, in_h, in_w, out_h, out_w](std::span<const double> g, const Tensor&,
                                                  std::span<GradSlot> p) {
                       if (p[0]) kernels::bilinear_backward(c, in_h, in_w, out_h, out_w,
                                                            g.data(), p[0].data);
                     });
}

Var matmul(const Var& a, const Var& b) {
  Tensor value = smatch::matmul(a.value(), b.value());
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  return make_result("matmul", std::move(value), {a, b},
                     [a, b, n, k, m](std::span<const double> g, const Tensor&,
                                     std::span<GradSlot> p) {
                       // dA = G B^T, dB = A^T G
                       if (p[0]) kernels::gemm_nt(n, m, k, g.data(), b.value().data(), p[0].data);
                       if (p[1]) kernels::gemm_tn(k, n, m, a.value().data(), g.data(), p[1].data);
                     });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor value = smatch::matmul_nt(a.value(), b.value());
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  return make_result("matmul_nt", std::move(value), {a, b},
                     [a, b, n, k, m](std::span<const double> g, const Tensor&,
                                     std::span<GradSlot> p) {
                       // C = A B^T: dA = G B, dB = G^T A
                       if (p[0]) kernels::gemm_nn(n, m, k, g.data(), b.value().data(), p[0].data);
                       if (p[1]) kernels::gemm_tn(m, n, k, g.data(), a.value().data(), p[1].data);
                     });
}

Var softmax(const Var& x, double temperature) {
  Tensor value = smatch::softmax(x.value(), temperature);
  return make_result("softmax", std::move(value), {x},
                     [temperature](std::span<const double> g, const Tensor& out,
                                   std::span<GradSlot> p) {
                       if (!p[0]) return;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * out[i];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         p[0].data[i] += out[i] * (g[i] - dot) / temperature;
                       }
                     });
}

Var row_normalize(const Var& x) {
  require_rank(x, 2, "row_normalize");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  auto inv_norm = std::make_shared<std::vector<double>>(rows, 0.0);
  std::vector<double> out(x.numel(), 0.0);
  const double* in = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += in[r * cols + c] * in[r * cols + c];
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    (*inv_norm)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[r * cols + c] * inv;
  }
  // The backward pass uses the exact (unrounded) normalized rows recomputed
  // from the input, so float32 outputs do not bias the adjoint.
  return make_result(
      "row_normalize", Tensor(x.shape(), std::move(out), x.dtype()), {x},
      [x, inv_norm, rows, cols](std::span<const double> g, const Tensor&,
                                std::span<GradSlot> p) {
        if (!p[0]) return;
        const double* in = x.value().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double inv = (*inv_norm)[r];
          if (inv == 0.0) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * in[r * cols + c] * inv;
          for (std::size_t c = 0; c < cols; ++c) {
            const double y = in[r * cols + c] * inv;
            p[0].data[r * cols + c] += inv * (g[r * cols + c] - y * dot);
          }
        }
      },
      rows);
}

Var gather_cells(const Var& fmap, const std::vector<std::size_t>& cells) {
  require_rank(fmap, 3, "gather_cells");
  const std::size_t channels = fmap.shape()[0];
  const std::size_t plane = fmap.shape()[1] * fmap.shape()[2];
  std::vector<double> out(cells.size() * channels);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] >= plane) {
      throw DimensionError("gather_cells: cell " + std::to_string(cells[i]) +
                           " outside map of " + std::to_string(plane) + " cells");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      out[i * channels + c] = fmap.value()[c * plane + cells[i]];
    }
  }
  return make_result("gather_cells", Tensor({cells.size(), channels}, std::move(out), fmap.dtype()),
                     {fmap},
                     [cells, channels, plane](std::span<const double> g, const Tensor&,
                                              std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < cells.size(); ++i) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           p[0].data[c * plane + cells[i]] += g[i * channels + c];
                         }
                       }
                     });
}

Var flatten_spatial(const Var& fmap) {
  require_rank(fmap, 3, "flatten_spatial");
  const std::size_t channels = fmap.shape()[0];
  const std::size_t plane = fmap.shape()[1] * fmap.shape()[2];
  std::vector<double> out(plane * channels);
  const double* in = fmap.value().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < plane; ++j) out[j * channels + c] = in[c * plane + j];
  }
  return make_result("flatten_spatial", Tensor({plane, channels}, std::move(out), fmap.dtype()),
                     {fmap},
                     [channels, plane](std::span<const double> g, const Tensor&,
                                       std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t c = 0; c < channels; ++c) {
                         for (std::size_t j = 0; j < plane; ++j) {
                           p[0].data[c * plane + j] += g[j * channels + c];
                         }
                       }
                     });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows, Shape out_shape) {
  require_rank(x, 2, "gather_rows");
  const std::size_t cols = x.shape()[1];
  if (shape_numel(out_shape) != rows.size() * cols) {
    throw DimensionError("gather_rows: output shape " + shape_string(out_shape) +
                         " does not hold " + std::to_string(rows.size()) + " rows of " +
                         std::to_string(cols));
  }
  std::vector<double> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.shape()[0]) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    }
    for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] = x.value()[rows[i] * cols + c];
  }
  return make_result("gather_rows", Tensor(std::move(out_shape), std::move(out), x.dtype()),
                     {x},
                     [rows, cols](std::span<const double> g, const Tensor&,
                                  std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           p[0].data[rows[i] * cols + c] += g[i * cols + c];
                         }
                       }
                     });
}

Var gather_pair_scores(const Var& a, const Var& b, const std::vector<RowPair>& pairs) {
  require_rank(a, 2, "gather_pair_scores");
  require_rank(b, 2, "gather_pair_scores");
  const std::size_t cols = a.shape()[1];
  if (b.shape()[1] != cols) {
    throw DimensionError("gather_pair_scores: descriptor widths differ, " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(pairs.size());
  const double* ad = a.value().data();
  const double* bd = b.value().data();
  for (std::size_t v = 0; v < pairs.size(); ++v) {
    if (pairs[v].a_row >= a.shape()[0] || pairs[v].b_row >= b.shape()[0]) {
      throw DimensionError("gather_pair_scores: row index out of range");
    }
    const double* ar = ad + pairs[v].a_row * cols;
    const double* br = bd + pairs[v].b_row * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += ar[c] * br[c];
    out[v] = acc;
  }
  return make_result("gather_pair_scores", Tensor({pairs.size()}, std::move(out), a.dtype()),
                     {a, b},
                     [a, b, pairs, cols](std::span<const double> g, const Tensor&,
                                         std::span<GradSlot> p) {
                       const double* ad = a.value().data();
                       const double* bd = b.value().data();
                       for (std::size_t v = 0; v < pairs.size(); ++v) {
                         const std::size_t i = pairs[v].a_row, j = pairs[v].b_row;
                         if (p[0]) {
                           for (std::size_t c = 0; c < cols; ++c) p[0].data[i * cols + c] += g[v] * bd[j * cols + c];
                         }
                         if (p[1]) {
                           for (std::size_t c = 0; c < cols; ++c) p[1].data[j * cols + c] += g[v] * ad[i * cols + c];
                         }
                       }
                     });
}

Var scatter(const Var& compact, const std::vector<std::size_t>& positions, Shape out_shape,
            double fill) {
  if (compact.numel() != positions.size()) {
    throw DimensionError("scatter: " + std::to_string(compact.numel()) + " values for " +
                         std::to_string(positions.size()) + " positions");
  }
  std::vector<double> out(shape_numel(out_shape), fill);
  for (std::size_t v = 0; v < positions.size(); ++v) {
    if (positions[v] >= out.size()) throw DimensionError("scatter: position out of range");
    out[positions[v]] = compact.value()[v];
  }
  return make_result("scatter", Tensor(std::move(out_shape), std::move(out), compact.dtype()),
                     {compact},
                     [positions](std::span<const double> g, const Tensor&,
                                 std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t v = 0; v < positions.size(); ++v) p[0].data[v] += g[positions[v]];
                     });
}

Var masked_soft_argmax(const Var& scores, std::size_t n, std::size_t rows,
                       std::size_t cols, const std::vector<std::uint8_t>& mask,
                       double temperature) {
  if (!(temperature > 0.0)) throw ContractError("soft-argmax temperature must be positive");
  const std::size_t cells = rows * cols;
  if (scores.numel() != n * cells) {
    throw DimensionError("masked_soft_argmax: " + std::to_string(scores.numel()) +
                         " scores for " + std::to_string(n) + " maps of " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!mask.empty() && mask.size() != n * cells) {
    throw DimensionError("masked_soft_argmax: mask size does not match scores");
  }
  auto weights = std::make_shared<std::vector<double>>(n * cells, 0.0);
  std::vector<double> out(n * 2, 0.0);
  const double* s = scores.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cells; ++c) {
      if (!mask.empty() && !mask[i * cells + c]) continue;
      const double v = s[i * cells + c];
      if (!std::isfinite(v)) throw NumericError("soft-argmax score is not finite");
      top = std::max(top, v);
      any = true;
    }
    if (!any) {
      throw ContractError("soft-argmax window " + std::to_string(i) + " has no valid cell");
    }
    double total = 0.0;
    double* w = weights->data() + i * cells;
    for (std::size_t c = 0; c < cells; ++c) {
      if (!mask.empty() && !mask[i * cells + c]) continue;
      w[c] = std::exp((s[i * cells + c] - top) / temperature);
      total += w[c];
    }
    double ex = 0.0, ey = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      w[c] /= total;
      ex += w[c] * static_cast<double>(c % cols);
      ey += w[c] * static_cast<double>(c / cols);
    }
    out[i * 2] = ex;
    out[i * 2 + 1] = ey;
  }
  return make_result(
      "masked_soft_argmax", Tensor({n, 2}, std::move(out), scores.dtype()), {scores},
      [weights, n, cells, cols, temperature](std::span<const double> g, const Tensor& out,
                                             std::span<GradSlot> p) {
        if (!p[0]) return;
        for (std::size_t i = 0; i < n; ++i) {
          const double* w = weights->data() + i * cells;
          // Use the unrounded expectation so float32 outputs do not bias the adjoint.
          double ex = 0.0, ey = 0.0;
          for (std::size_t c = 0; c < cells; ++c) {
            ex += w[c] * static_cast<double>(c % cols);
            ey += w[c] * static_cast<double>(c / cols);
          }
          (void)out;
          const double gx = g[i * 2], gy = g[i * 2 + 1];
          for (std::size_t c = 0; c < cells; ++c) {
            if (w[c] == 0.0) continue;
            const double dx = static_cast<double>(c % cols) - ex;
            const double dy = static_cast<double>(c / cols) - ey;
            p[0].data[i * cells + c] += w[c] * (gx * dx + gy * dy) / temperature;
          }
        }
      },
      n * cells);
}

Var mean_distance(const Var& pred, const Tensor& target) {
  require_rank(pred, 2, "mean_distance");
  if (pred.shape() != target.shape() || pred.shape()[1] != 2) {
    throw DimensionError("mean_distance: prediction " + shape_string(pred.shape()) +
                         " and target " + shape_string(target.shape()) + " must both be [n,2]");
  }
  const std::size_t n = pred.shape()[0];
  if (n == 0) throw ContractError("mean_distance over zero points");
  auto dist = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred.value()[2 * i] - target[2 * i];
    const double dy = pred.value()[2 * i + 1] - target[2 * i + 1];
    (*dist)[i] = std::sqrt(dx * dx + dy * dy);
    total += (*dist)[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_result("mean_distance", Tensor::scalar(total * inv_n, pred.dtype()), {pred},
                     [pred, target, dist, n, inv_n](std::span<const double> g, const Tensor&,
                                                    std::span<GradSlot> p) {
                       if (!p[0]) return;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double d = (*dist)[i];
                         if (d == 0.0) continue;
                         const double dx = pred.value()[2 * i] - target[2 * i];
                         const double dy = pred.value()[2 * i + 1] - target[2 * i + 1];
                         p[0].data[2 * i] += g[0] * inv_n * dx / d;
                         p[0].data[2 * i + 1] += g[0] * inv_n * dy / d;
                       }
                     },
                     n);
}

}  // namespace smatch::ad
