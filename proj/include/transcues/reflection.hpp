#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "transcues/nn.hpp"

namespace transcues {

template <typename Scalar>
struct ReflectionOutput {
  Var<Scalar> enhanced;           // same shape as the input
  Var<Scalar> reflection_logits;  // (B, 2, h, w): non-reflective / reflective
};

// Optional instrumentation of one forward pass.
struct ReflectionProbe {
  int zero_skip = -1;                      // zero encoder output E_i (1..5) before it is reused
  std::array<Shape, 6> encoder_shapes{};   // E_0 .. E_5
  std::array<Shape, 5> decoder_shapes{};   // D_0 .. D_4
};

// Reflection Feature Enhancement: a conv-deconv encoder/decoder with
// concatenated skips. Encoder blocks 1-4 halve the resolution by max-pooling,
// block 5 doubles it; decoder blocks 1-3 double it and block 4 refines with a
// stride-1 deconvolution. Skips are resized to the decoder resolution before
// concatenation. The last 1x1 convolution emits 2 reflection logits plus 32
// feature channels; the features are projected back to the input width and
// added to the input.
template <typename Scalar>
class ReflectionEnhancement {
 public:
  static constexpr std::array<Index, 5> kEncoderChannels{32, 64, 64, 128, 128};
  static constexpr std::array<Index, 4> kDecoderChannels{128, 64, 64, 32};
  static constexpr Index kFeatureChannels = 32;
  static constexpr Index kMinimumSize = 16;

  ReflectionEnhancement(const Scope<Scalar>& scope, Index channels);

  ReflectionOutput<Scalar> operator()(const Var<Scalar>& y, ReflectionProbe* probe = nullptr) const;

 private:
  Index channels_;
  Conv2d<Scalar> stem_;
  std::array<ConvBnRelu<Scalar>, 5> encoder_;
  struct DecoderBlock {
    ConvTranspose2d<Scalar> deconv;
    BatchNorm2d<Scalar> bn;
  };
  std::array<DecoderBlock, 4> decoder_;
  ConvTranspose2d<Scalar> refine_;
  Conv2d<Scalar> output_;
  Conv2d<Scalar> project_;
};

// Binary map: 1 where the class id is in `reflective`, else 0.
std::vector<std::int32_t> extract_reflective_pseudo_gt(std::span<const std::int32_t> semantic,
                                                       const std::set<std::int32_t>& reflective);

}  // namespace transcues
