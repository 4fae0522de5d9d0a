#include "transcues/decoder.hpp"

namespace transcues {

template <typename Scalar>
FeatureParsingDecoder<Scalar>::FeatureParsingDecoder(const Scope<Scalar>& scope, const BackboneConfig& backbone,
                                                     Index embed_channel)
    : embed_channel_(embed_channel) {
  if (embed_channel <= 0) throw ConfigError("embed_channel must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    projections_[i] =
        Linear<Scalar>(scope.child("proj", static_cast<int>(i) + 1), backbone.stages[i].channels, embed_channel);
  }
  mixer_ = TransformerBlock<Scalar>(scope.child("mixer"), embed_channel, 1, backbone.stages[0].sr_ratio, 4, true);
}

template <typename Scalar>
Var<Scalar> FeatureParsingDecoder<Scalar>::operator()(const FeaturePyramid<Scalar>& pyramid) const {
  const auto& top = pyramid.levels[0];
  const Index batch = top.dim(0), h = top.dim(2), w = top.dim(3);
  Var<Scalar> fused;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& level = pyramid.levels[i];
    if (level.value().rank() != 4 || level.dim(0) != batch) {
      throw ShapeError("decoder: pyramid level " + std::to_string(i + 1) + " has shape " + to_string(level.shape()) +
                       ", expected batch " + std::to_string(batch));
    }
    const Index lh = level.dim(2), lw = level.dim(3);
    auto projected = ops::tokens_to_nchw(projections_[i](ops::nchw_to_tokens(level)), lh, lw);
    auto upsampled = ops::resize_bilinear(projected, h, w);
    fused = fused.defined() ? ops::add(fused, upsampled) : upsampled;
  }
  auto tokens = mixer_(ops::nchw_to_tokens(fused), h, w);
  return ops::tokens_to_nchw(tokens, h, w);
}

template <typename Scalar>
SegmentationHead<Scalar>::SegmentationHead(const Scope<Scalar>& scope, Index in_channels, Index n_class) {
  if (n_class < 2) throw ConfigError("segmentation head needs at least 2 classes, got " + std::to_string(n_class));
  classifier_ = Conv2d<Scalar>(scope.child("classifier"), in_channels, n_class, 1, {}, true, ConvInit::projection);
}

template <typename Scalar>
Var<Scalar> SegmentationHead<Scalar>::operator()(const Var<Scalar>& features, Index out_height,
                                                 Index out_width) const {
  if (out_height != 4 * features.dim(2) || out_width != 4 * features.dim(3)) {
    throw ShapeError("segmentation head: output " + std::to_string(out_height) + "x" + std::to_string(out_width) +
                     " is not 4x the feature size " + to_string(features.shape()));
  }
  return ops::resize_bilinear(classifier_(features), out_height, out_width);
}

template class FeatureParsingDecoder<float>;
template class FeatureParsingDecoder<double>;
template class SegmentationHead<float>;
template class SegmentationHead<double>;

}  // namespace transcues
