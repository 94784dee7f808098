// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes up front and throws
// ShapeError naming the offending axis. Image tensors are [B,C,H,W].

#pragma once

#include <random>
#include <span>
#include <vector>

#include "collagan/tensor.hpp"

namespace collagan {

// ---- convolution -----------------------------------------------------------

/// Cross-correlation. weight is [Cout,Cin,kh,kw] with kh,kw in {1,3,4};
/// stride in {1,2}. Output extent is floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Stride-2 transposed convolution with a 4x4 kernel and padding 1, so the
/// output is exactly twice the input extent. weight is [Cin,Cout,4,4]; the
/// op is the adjoint of conv2d(., weight, stride 2, padding 1).
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 2);

// ---- normalisation and activations ----------------------------------------

inline constexpr double kInstanceNormEps = 1e-5;

/// Per (batch, channel) plane: (x - mean) / sqrt(var + eps), biased variance.
Tensor instance_norm(const Tensor& input, double eps = kInstanceNormEps);

/// x for x >= 0, slope*x otherwise. The derivative at 0 is taken as slope.
Tensor leaky_relu(const Tensor& input, double slope);
Tensor sigmoid(const Tensor& input);

/// Uniform double in [0,1) from the top 53 bits of one engine draw.
double uniform01(std::mt19937_64& rng);

/// Inverted dropout: survivors are divided by (1 - rate). Identity when
/// training is false. The mask is drawn from rng.
Tensor dropout(const Tensor& input, double rate, bool training, std::mt19937_64& rng);

// ---- pooling and shape -----------------------------------------------------

/// [B,C,H,W] -> [B,C] spatial mean.
Tensor avg_pool_global(const Tensor& input);
/// 2x2 mean pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& input);

Tensor concat(const std::vector<Tensor>& inputs, int axis);
Tensor slice(const Tensor& input, int axis, std::int64_t start, std::int64_t length);
Tensor reshape(const Tensor& input, Shape shape);

/// input [B,F], weight [F',F], bias [F'] -> [B,F'].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
/// Natural log; rejects non-positive inputs with NumericError.
Tensor log(const Tensor& a);
/// max(a, floor); values below floor receive zero gradient.
Tensor clamp_min(const Tensor& a, double floor);

/// out[b,c,...] = x[b,c,...] * scale[b,c]; x has rank >= 2.
Tensor scale_channels(const Tensor& x, const Tensor& scale);
/// Broadcast v[B] across every element of sample b of a tensor with `shape`.
Tensor broadcast_samples(const Tensor& v, const Shape& shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean |a|; the subgradient at 0 is 0.
Tensor mean_abs(const Tensor& a);
Tensor mean_sq(const Tensor& a);

/// Per-sample dynamic range over a pair: max(x_b ∪ y_b) - min(x_b ∪ y_b),
/// returned as [B]. Gradient flows to the first arg-max / arg-min element.
Tensor sample_range(const Tensor& x, const Tensor& y);

/// Mean over the batch of -log softmax(logits[b])[classes[b]].
/// logits is [B,N]; every class index must lie in [0, N).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> classes);

// ---- filtering -------------------------------------------------------------

/// Uniform window mean over each [H,W] plane with reflect padding (edge
/// sample not repeated). window must be odd and not exceed H or W.
Tensor box_filter(const Tensor& input, int window);

}  // namespace collagan
