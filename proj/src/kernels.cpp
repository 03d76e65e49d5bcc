// SPDX-License-Identifier: Apache-2.0
#include "smatch/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smatch/errors.hpp"

namespace smatch {
namespace {

// Output columns ox with 0 <= ox*stride + kx - padding < in_w.
struct ColumnRange {
  std::size_t lo = 0, hi = 0;  // half-open
};

ColumnRange valid_columns(std::size_t in_w, std::size_t out_w, std::size_t stride,
                          std::size_t padding, std::size_t kx) {
  const long long s = static_cast<long long>(stride);
  const long long shift = static_cast<long long>(kx) - static_cast<long long>(padding);
  long long lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  const long long last = static_cast<long long>(in_w) - 1 - shift;
  if (last < 0) return {};
  long long hi = last / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out_w));
  if (lo >= hi) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace

Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& kernel, std::size_t stride,
                               std::size_t padding) {
  if (x.size() != 3 || kernel.size() != 4) {
    throw DimensionError("conv2d expects x [C,H,W] and kernel [Co,Ci,kh,kw], got " +
                         shape_string(x) + " and " + shape_string(kernel));
  }
  if (stride == 0) throw ContractError("conv2d stride must be positive");
  if (x[0] != kernel[1]) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(x[0]) +
                         " channels, kernel expects " + std::to_string(kernel[1]));
  }
  if (kernel[2] > x[1] + 2 * padding || kernel[3] > x[2] + 2 * padding) {
    throw DimensionError("conv2d kernel " + shape_string(kernel) +
                         " larger than padded input " + shape_string(x));
  }
  Conv2dGeometry g{};
  g.in_channels = x[0];
  g.in_h = x[1];
  g.in_w = x[2];
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.padding = padding;
  g.out_h = (x[1] + 2 * padding - kernel[2]) / stride + 1;
  g.out_w = (x[2] + 2 * padding - kernel[3]) / stride + 1;
  return g;
}

namespace kernels {

void conv2d_forward(const Conv2dGeometry& g, const double* x, const double* kernel,
                    double* out) {
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    double* out_c = out + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* x_c = x + ci * g.in_h * g.in_w;
      const double* k_c = kernel + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const double w = k_c[ky * g.kernel_w + kx];
          const ColumnRange cols = valid_columns(g.in_w, g.out_w, s, g.padding, kx);
          if (cols.lo == cols.hi) continue;
          const std::ptrdiff_t shift =
              static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            double* orow = out_c + oy * g.out_w;
            const double* irow = x_c + static_cast<std::size_t>(iy) * g.in_w;
            if (s == 1) {
              const double* src = irow + shift;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) orow[ox] += w * src[ox];
            } else {
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                orow[ox] += w * irow[static_cast<std::ptrdiff_t>(ox * s) + shift];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, const double* grad_out,
                           const double* kernel, double* grad_x) {
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const double* go_c = grad_out + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      double* gx_c = grad_x + ci * g.in_h * g.in_w;
      const double* k_c = kernel + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const double w = k_c[ky * g.kernel_w + kx];
          const ColumnRange cols = valid_columns(g.in_w, g.out_w, s, g.padding, kx);
          if (cols.lo == cols.hi) continue;
          const std::ptrdiff_t shift =
              static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const double* grow = go_c + oy * g.out_w;
            double* xrow = gx_c + static_cast<std::size_t>(iy) * g.in_w;
            if (s == 1) {
              double* dst = xrow + shift;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += w * grow[ox];
            } else {
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                xrow[static_cast<std::ptrdiff_t>(ox * s) + shift] += w * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel(const Conv2dGeometry& g, const double* grad_out,
                            const double* x, double* grad_kernel) {
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const double* go_c = grad_out + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* x_c = x + ci * g.in_h * g.in_w;
      double* gk_c = grad_kernel + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const ColumnRange cols = valid_columns(g.in_w, g.out_w, s, g.padding, kx);
          if (cols.lo == cols.hi) continue;
          const std::ptrdiff_t shift =
              static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
          double acc = 0.0;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const double* grow = go_c + oy * g.out_w;
            const double* xrow = x_c + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
              acc += grow[ox] * xrow[static_cast<std::ptrdiff_t>(ox * s) + shift];
            }
          }
          gk_c[ky * g.kernel_w + kx] += acc;
        }
      }
    }
  }
}

BilinearTaps bilinear_taps(std::size_t in, std::size_t out) {
  BilinearTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    taps.lo[o] = i0;
    taps.hi[o] = i0 + 1 < in ? i0 + 1 : i0;
    taps.frac[o] = taps.hi[o] == i0 ? 0.0 : src - static_cast<double>(i0);
  }
  return taps;
}

void bilinear_forward(std::size_t channels, std::size_t in_h, std::size_t in_w,
                      std::size_t out_h, std::size_t out_w, const double* x,
                      double* out) {
  const BilinearTaps ty = bilinear_taps(in_h, out_h);
  const BilinearTaps tx = bilinear_taps(in_w, out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x + c * in_h * in_w;
    double* oc = out + c * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* r0 = xc + ty.lo[oy] * in_w;
      const double* r1 = xc + ty.hi[oy] * in_w;
      const double fy = ty.frac[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fx = tx.frac[ox];
        const double top = (1.0 - fx) * r0[tx.lo[ox]] + fx * r0[tx.hi[ox]];
        const double bottom = (1.0 - fx) * r1[tx.lo[ox]] + fx * r1[tx.hi[ox]];
        oc[oy * out_w + ox] += (1.0 - fy) * top + fy * bottom;
      }
    }
  }
}

void bilinear_backward(std::size_t channels, std::size_t in_h, std::size_t in_w,
                       std::size_t out_h, std::size_t out_w, const double* grad_out,
                       double* grad_x) {
  const BilinearTaps ty = bilinear_taps(in_h, out_h);
  const BilinearTaps tx = bilinear_taps(in_w, out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* gc = grad_out + c * out_h * out_w;
    double* xc = grad_x + c * in_h * in_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      double* r0 = xc + ty.lo[oy] * in_w;
      double* r1 = xc + ty.hi[oy] * in_w;
      const double fy = ty.frac[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double g = gc[oy * out_w + ox];
        const double fx = tx.frac[ox];
        r0[tx.lo[ox]] += (1.0 - fy) * (1.0 - fx) * g;
        r0[tx.hi[ox]] += (1.0 - fy) * fx * g;
        r1[tx.lo[ox]] += fy * (1.0 - fx) * g;
        r1[tx.hi[ox]] += fy * fx * g;
      }
    }
  }
}

void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * m + j] += acc;
    }
  }
}

void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * n;
    const double* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = arow[i];
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace kernels

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), kernel.shape(), stride, padding);
  std::vector<double> out(g.out_channels * g.out_h * g.out_w, 0.0);
  kernels::conv2d_forward(g, x.data(), kernel.data(), out.data());
  return Tensor({g.out_channels, g.out_h, g.out_w}, std::move(out), x.dtype());
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                         std::size_t padding) {
  require_rank(x, 3, "transposed_conv2d input");
  require_rank(kernel, 4, "transposed_conv2d kernel");
  if (stride == 0) throw ContractError("transposed_conv2d stride must be positive");
  if (x.dim(0) != kernel.dim(0)) {
    throw DimensionError("transposed_conv2d channel mismatch: input has " +
                         std::to_string(x.dim(0)) + " channels, kernel expects " +
                         std::to_string(kernel.dim(0)));
  }
  const long long out_h = static_cast<long long>((x.dim(1) - 1) * stride + kernel.dim(2)) -
                          2 * static_cast<long long>(padding);
  const long long out_w = static_cast<long long>((x.dim(2) - 1) * stride + kernel.dim(3)) -
                          2 * static_cast<long long>(padding);
  if (out_h <= 0 || out_w <= 0) {
    throw DimensionError("transposed_conv2d produces an empty output for input " +
                         shape_string(x.shape()));
  }
  // The scatter is the adjoint of a conv2d whose kernel has the same memory
  // layout with the channel roles swapped.
  const Shape out_shape{kernel.dim(1), static_cast<std::size_t>(out_h),
                        static_cast<std::size_t>(out_w)};
  const Conv2dGeometry g = conv2d_geometry(out_shape, kernel.shape(), stride, padding);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  kernels::conv2d_backward_input(g, x.data(), kernel.data(), out.data());
  return Tensor(out_shape, std::move(out), x.dtype());
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_resize input");
  if (x.dim(1) == 0 || x.dim(2) == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("bilinear_resize needs non-empty input and output");
  }
  std::vector<double> out(x.dim(0) * out_h * out_w, 0.0);
  kernels::bilinear_forward(x.dim(0), x.dim(1), x.dim(2), out_h, out_w, x.data(),
                            out.data());
  return Tensor({x.dim(0), out_h, out_w}, std::move(out), x.dtype());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(a.dim(0) * b.dim(1), 0.0);
  kernels::gemm_nn(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), out.data());
  return Tensor({a.dim(0), b.dim(1)}, std::move(out), a.dtype());
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt lhs");
  require_rank(b, 2, "matmul_nt rhs");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt inner dimensions differ: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(a.dim(0) * b.dim(0), 0.0);
  kernels::gemm_nt(a.dim(0), a.dim(1), b.dim(0), a.data(), b.data(), out.data());
  return Tensor({a.dim(0), b.dim(0)}, std::move(out), a.dtype());
}

Tensor softmax(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("softmax temperature must be positive");
  if (x.empty()) throw ContractError("softmax of an empty tensor");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw NumericError("softmax input contains a non-finite value");
    top = std::max(top, v);
  }
  std::vector<double> out(x.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp((x[i] - top) / temperature);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return Tensor(x.shape(), std::move(out), x.dtype());
}

}  // namespace smatch
