#pragma once

#include <array>

#include "transcues/encoder.hpp"

namespace transcues {

// Feature Parsing Module: projects each pyramid level to a common width,
// upsamples everything to stride 4, sums, then mixes with one transformer
// layer at stride 4.
template <typename Scalar>
class FeatureParsingDecoder {
 public:
  FeatureParsingDecoder(const Scope<Scalar>& scope, const BackboneConfig& backbone, Index embed_channel);

  // Returns (B, embed_channel, H/4, W/4).
  Var<Scalar> operator()(const FeaturePyramid<Scalar>& pyramid) const;

  Index embed_channel() const { return embed_channel_; }

 private:
  Index embed_channel_;
  std::array<Linear<Scalar>, 4> projections_;
  TransformerBlock<Scalar> mixer_;
};

// Per-pixel linear classifier followed by bilinear upsampling to the image.
template <typename Scalar>
class SegmentationHead {
 public:
  SegmentationHead(const Scope<Scalar>& scope, Index in_channels, Index n_class);

  // features: (B, C, h, w); out_height/out_width must be 4h and 4w.
  Var<Scalar> operator()(const Var<Scalar>& features, Index out_height, Index out_width) const;

 private:
  Conv2d<Scalar> classifier_;
};

}  // namespace transcues
