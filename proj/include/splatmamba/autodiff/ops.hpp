// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"

#include <vector>

namespace sm::ad {

// Matrix products. All matrices are rank-2 row-major.

/// a[m x k] . b[k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[m x in] . W^T + bias, with W stored [out x in]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Binary elementwise ops. Broadcasting works over leading axes only: the
// smaller operand's shape must be a suffix of the larger one's.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);

// Unary elementwise ops.

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);
/// min(x, hi); gradient is zero where clamped.
template <typename T>
Tensor<T> clamp_max(const Tensor<T>& x, T hi);

/// Normalizes over the last axis, then applies gamma * xhat + beta. gamma/beta may be undefined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Per-channel 1-D convolution of x[L x D] with kernel[w x D].
///
/// Causal: y[t] = sum_j k[j] * x[t - j] (zero padding on the left), so
/// kernel [0, 1] is a one-step delay. Non-causal centres the window.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, bool causal = true);

// Shape manipulation.

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// Concatenate along axis 0; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

// Reductions.

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// mean((a - b)^2) over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// Normalize each row of x[n x k] to unit length. Rows with norm below `eps`
/// are replaced by `fallback` (length k) and pass no gradient.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, const std::vector<T>& fallback, T eps = T(1e-12));

} // namespace sm::ad
