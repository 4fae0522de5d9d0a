#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "transcues/autograd.hpp"

// Differentiable tensor operations. Every function records its backward pass
// when gradient mode is on; shapes are checked eagerly and reported as
// ShapeError. Explicitly instantiated for float and double.
namespace transcues::ops {

// Element-wise, identical shapes required.
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);
template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> gelu(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> abs(const Var<S>& a);
// max(a, floor) element-wise; the gradient is routed to `a` where a > floor.
template <typename S> Var<S> clamp_min(const Var<S>& a, S floor);

template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);

// x: (..., in), weight: (out, in), bias: (out) or undefined.
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

// (B, C, H, W) <-> (B, H*W, C)
template <typename S> Var<S> nchw_to_tokens(const Var<S>& x);
template <typename S> Var<S> tokens_to_nchw(const Var<S>& x, Index height, Index width);
// tokens (B, N, C) + table (1, N, C), broadcast over the batch.
template <typename S> Var<S> add_broadcast_batch(const Var<S>& tokens, const Var<S>& table);

struct ConvGeometry {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

inline Index conv_output_size(Index input, Index kernel, const ConvGeometry& g) {
  return (input + 2 * g.padding - g.dilation * (kernel - 1) - 1) / g.stride + 1;
}

// x: (B, Cin, H, W), weight: (Cout, Cin, k, k), bias: (Cout) or undefined.
template <typename S> Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, ConvGeometry geometry);
// x: (B, Cin, H, W), weight: (Cin, Cout, k, k); output (H-1)*s - 2p + d(k-1) + 1.
template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, ConvGeometry geometry);
// Per-channel k x k convolution, stride 1, "same" padding. weight: (C, 1, k, k).
template <typename S> Var<S> depthwise_conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

// Normalizes over the last axis.
template <typename S> Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps);

// Batch statistics in training mode (running statistics are updated in
// place), running statistics otherwise.
template <typename S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Tensor<S>& running_mean,
                    Tensor<S>& running_var, bool training, S momentum, S eps);

// Multi-head scaled dot-product attention on token layouts.
// q: (B, N, C), k and v: (B, M, C). When `weights` is non-null it receives the
// softmax attention matrix, shape (B, heads, N, M).
template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, Index heads, Tensor<S>* weights = nullptr);

// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename S> Var<S> resize_bilinear(const Var<S>& x, Index height, Index width);
template <typename S> Var<S> max_pool2x2(const Var<S>& x);

template <typename S> Var<S> concat_channels(const std::vector<Var<S>>& parts);
template <typename S> Var<S> slice_channels(const Var<S>& x, Index begin, Index count);
template <typename S> Var<S> softmax_channels(const Var<S>& x);

// Mean per-pixel softmax cross-entropy. logits: (B, C, H, W); labels holds
// B*H*W class ids in NHW order.
template <typename S> Var<S> softmax_cross_entropy(const Var<S>& logits, std::span<const std::int32_t> labels);

}  // namespace transcues::ops
