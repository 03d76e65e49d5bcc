// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable operations. Each one computes its forward value with the
// kernels in kernels.hpp and records its adjoint on the tape.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smatch/autodiff.hpp"

namespace smatch::ad {

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
// factor * x + shift, shift a constant of x's shape.
Var affine(const Var& x, double factor, const Tensor& shift);
Var relu(const Var& x);
// Same elements under a new shape of equal size.
Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);
Var mean(const Var& x);

// x: [C,H,W], bias: [C].
Var add_channel_bias(const Var& x, const Var& bias);
Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding);
Var transposed_conv2d(const Var& x, const Var& kernel, std::size_t stride,
                      std::size_t padding);
Var bilinear_resize(const Var& x, std::size_t out_h, std::size_t out_w);

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var softmax(const Var& x, double temperature);

// Rows scaled to unit L2 norm; an all-zero row stays zero.
Var row_normalize(const Var& x);

// fmap: [C,h,w]; cells are linear indices y*w + x. Result [cells.size(), C].
Var gather_cells(const Var& fmap, const std::vector<std::size_t>& cells);
// fmap: [C,h,w] -> [h*w, C], row j = y*w + x.
Var flatten_spatial(const Var& fmap);
// x: [R,C] -> the listed rows, reshaped to out_shape (numel rows.size()*C).
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows, Shape out_shape);

struct RowPair {
  std::size_t a_row, b_row;
};
// Result [pairs.size()], entry v = <a[pairs[v].a_row], b[pairs[v].b_row]>.
Var gather_pair_scores(const Var& a, const Var& b, const std::vector<RowPair>& pairs);

// Places compact[v] at out[positions[v]] in a tensor of out_shape; every other
// entry holds fill and carries no gradient.
Var scatter(const Var& compact, const std::vector<std::size_t>& positions,
            Shape out_shape, double fill);

// scores holds n maps of rows x cols. For each map, returns the expectation of
// (col, row) under softmax(scores / temperature) restricted to cells whose
// mask byte is nonzero (empty mask = all valid). Result [n, 2] as (x, y).
// Throws ContractError if a map has no valid cell.
Var masked_soft_argmax(const Var& scores, std::size_t n, std::size_t rows,
                       std::size_t cols, const std::vector<std::uint8_t>& mask,
                       double temperature);

// Mean over rows of the Euclidean distance between pred[i] and target[i].
// pred, target: [n, 2]. The gradient at a zero distance is taken as zero.
Var mean_distance(const Var& pred, const Tensor& target);

}  // namespace smatch::ad
