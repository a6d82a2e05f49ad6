#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stformer/rng.hpp"
#include "stformer/tensor.hpp"

namespace stf {

inline constexpr double kLayerNormEps = 1e-5;

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);

/// Elementwise sum of equally shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
/// Adds `bias` (shape [d]) along the last axis of `x`.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Elementwise product of equally shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Row-wise softmax over the last axis of a 2-D tensor, with per-row max
/// subtraction. Entries may be -inf (masked). `additive_mask`, when given,
/// holds one {0, -inf} value per element and is added before the softmax.
/// Throws DegenerateMaskError when a row has no finite entry.
Tensor softmax_rows(const Tensor& m, std::span<const double> additive_mask = {});

/// Normalizes over the last axis, then applies gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// Exact GeLU, x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

enum class Padding { same, valid };

/// Cross-correlation along the last axis. x is [C_in x L] or a batch
/// [N x C_in x L]; kernels are [C_out x C_in x K]; bias, if defined, is
/// [C_out]. Same padding yields ceil(L / stride) outputs with the extra pad
/// on the right.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, Padding padding);
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              Padding padding);

/// Mean over non-overlapping (for window == stride) windows of the last axis;
/// a trailing remainder shorter than the window is dropped.
Tensor avg_pool1d(const Tensor& x, std::size_t window, std::size_t stride);

/// Mean over one axis; the axis is removed from the shape.
Tensor global_avg_pool(const Tensor& x, std::size_t axis);

/// Inverted dropout. Identity in eval mode or when p == 0.
Tensor dropout(const Tensor& x, double p, Mode mode, RngStream* rng);

/// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Horizontal concatenation of 2-D tensors with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);
/// Flattens and concatenates into a 1-D tensor.
Tensor concat_flat(std::span<const Tensor> parts);

}  // namespace stf
