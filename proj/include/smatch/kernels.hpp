// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward and adjoint numeric kernels on plain tensors. All reductions run in
// a fixed serial order (ascending input channel, then kernel row, then kernel
// column; ascending inner index for products), so results are bitwise
// reproducible.

#include <cstddef>

#include "smatch/tensor.hpp"

namespace smatch {

struct Conv2dGeometry {
  std::size_t in_channels, in_h, in_w;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

// x: [C_in,H,W], kernel: [C_out,C_in,kh,kw]. Throws DimensionError.
Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& kernel, std::size_t stride,
                               std::size_t padding);

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

// x: [C_in,H,W], kernel: [C_in,C_out,kh,kw]; H' = (H-1)*stride - 2*padding + kh.
Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                         std::size_t padding);

// Sampling with align_corners = false (half-pixel centers, edge clamped).
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor matmul(const Tensor& a, const Tensor& b);     // [n,k]x[k,m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [n,k]x[m,k]^T

// Softmax over every element of x after dividing by temperature.
Tensor softmax(const Tensor& x, double temperature);

namespace kernels {

// Raw accumulate-into variants used by the autodiff layer. `out` and the
// gradient buffers are accumulated with +=.
void conv2d_forward(const Conv2dGeometry& g, const double* x, const double* kernel,
                    double* out);
void conv2d_backward_input(const Conv2dGeometry& g, const double* grad_out,
                           const double* kernel, double* grad_x);
void conv2d_backward_kernel(const Conv2dGeometry& g, const double* grad_out,
                            const double* x, double* grad_kernel);

struct BilinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};
BilinearTaps bilinear_taps(std::size_t in, std::size_t out);

void bilinear_forward(std::size_t channels, std::size_t in_h, std::size_t in_w,
                      std::size_t out_h, std::size_t out_w, const double* x,
                      double* out);
void bilinear_backward(std::size_t channels, std::size_t in_h, std::size_t in_w,
                       std::size_t out_h, std::size_t out_w, const double* grad_out,
                       double* grad_x);

// c[n,m] += a[n,k] * b[k,m]
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c);
// c[n,m] += a[n,k] * b[m,k]^T
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c);
// c[n,m] += a[k,n]^T * b[k,m]
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c);

}  // namespace kernels
}  // namespace smatch
