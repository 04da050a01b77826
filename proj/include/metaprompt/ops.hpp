#pragma once
// Differentiable tensor operations. All are templates instantiated for float
// and double; spatial tensors are unbatched C×H×W.

#include <cstdint>
#include <span>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt::ops {

// Elementwise (operands must have identical shapes).
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value);

// Activations.
template <typename T> BasicTensor<T> silu(const BasicTensor<T>& x);
/// Exact (erf) GELU.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);

// Layout.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// 2-D transpose.
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);
/// Concatenate along axis 0; trailing dimensions must agree.
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts);
/// Rows [start, start+length) along axis 0.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t start, std::int64_t length);
/// Mirror the last axis (horizontal flip for C×H×W).
template <typename T> BasicTensor<T> flip_last(const BasicTensor<T>& x);

// Reductions to a one-element tensor.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

/// c = a·b for a[m×k], b[k×n].
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// y = W·x + b for x[in], W[out×in], b[out] (b may be undefined).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// Max-stabilized softmax along `axis`.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, int axis);

/// Normalize over the last axis, then per-feature affine.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));

/// Group normalization of C×H×W with per-channel affine.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));

/// y[c] = x[c]·(1 + scale[c]) + shift[c] for C×H×W input and C-vectors.
template <typename T>
BasicTensor<T> scale_shift(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                           const BasicTensor<T>& shift);

/// Cross-correlation of x[Cin×H×W] with w[Cout×Cin×k×k]; bias may be undefined.
/// Output size is floor((H + 2·pad − k)/stride) + 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      int stride, int pad);

/// Transposed convolution of x[Cin×H×W] with w[Cin×Cout×k×k].
/// Output size is (H − 1)·stride − 2·pad + k.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& bias, int stride, int pad);

/// Bilinear resampling of C×H×W, half-pixel centers (align_corners = false).
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::int64_t out_h, std::int64_t out_w);

/// Mean pixelwise cross-entropy of logits[K×H×W] against labels (H·W class
/// indices). Pixels labelled ignore_index are skipped.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                             std::int32_t ignore_index);

/// Mean |pred − target| over pixels where mask != 0 (empty mask = all valid).
template <typename T>
BasicTensor<T> masked_l1(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                         std::span<const std::uint8_t> mask);

}  // namespace metaprompt::ops
