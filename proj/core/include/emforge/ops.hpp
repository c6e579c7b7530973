// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "emforge/tape.hpp"
#include "emforge/tensor.hpp"

// Differentiable tensor operations. Every function computes its result
// eagerly, checks it for NaN/Inf, and records itself on the tape of any
// tracked input. Reductions run in ascending index order.
namespace emforge {

// c[i,j] = sum_p a[i,p] * b[p,j], p ascending.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[n x d] + bias[d], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// tanh-approximated GELU.
Tensor gelu(const Tensor& x);

// Normalizes each last-axis slice to zero mean / unit population variance,
// then applies gamma and beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Max-subtracted softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Row gather from a 2-D table; rows may repeat.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
// [n x a] | [n x b] -> [n x (a + b)].
Tensor concat_cols(const Tensor& left, const Tensor& right);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);

// Scales each row of a 2-D tensor to unit L2 norm. Zero rows are an error.
Tensor l2_normalize_rows(const Tensor& x);

// out[i] = x[i, cols[i]] for a 2-D x.
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);

// out[i, j] = <a[i], b[i * group + j]> for a: [n x d], b: [(n * group) x d].
Tensor group_dot(const Tensor& a, const Tensor& b, std::size_t group);

// Packed multi-sequence layout for causal attention: each segment is
// (offset, length) into the row dimension; key_mask[r] = 0 excludes row r as
// an attention key.
struct AttentionLayout {
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  std::vector<std::uint8_t> key_mask;
};

// Multi-head causal self-attention over qkv = [q | k | v] of shape
// [rows x 3d]. Row i of a segment attends to unmasked rows j <= i of the same
// segment. Returns [rows x d].
Tensor causal_attention(const Tensor& qkv, const AttentionLayout& layout, std::size_t heads);

}  // namespace emforge
