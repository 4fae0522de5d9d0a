#include "transcues/reflection.hpp"

#include <atomic>
#include <iostream>

namespace transcues {

template <typename Scalar>
ReflectionEnhancement<Scalar>::ReflectionEnhancement(const Scope<Scalar>& scope, Index channels)
    : channels_(channels) {
  stem_ = Conv2d<Scalar>(scope.child("stem"), channels, kEncoderChannels[0], 3, {1, 1, 1});
  Index in = kEncoderChannels[0];
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i] = ConvBnRelu<Scalar>(scope.child("enc", static_cast<int>(i) + 1), in, kEncoderChannels[i], 3,
                                     {1, 1, 1});
    in = kEncoderChannels[i];
  }
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    const Index skip = kEncoderChannels[3 - j];
    const auto s = scope.child("dec", static_cast<int>(j) + 1);
    decoder_[j].deconv = ConvTranspose2d<Scalar>(s.child("deconv"), in + skip, kDecoderChannels[j], 3, {1, 1, 1});
    decoder_[j].bn = BatchNorm2d<Scalar>(s.child("bn"), kDecoderChannels[j]);
    in = kDecoderChannels[j];
  }
  refine_ = ConvTranspose2d<Scalar>(scope.child("refine"), in, in, 3, {1, 1, 1});
  output_ = Conv2d<Scalar>(scope.child("output"), in, 2 + kFeatureChannels, 1, {}, true, ConvInit::projection);
  project_ = Conv2d<Scalar>(scope.child("project"), kFeatureChannels, channels, 1, {}, true, ConvInit::projection);
}

template <typename Scalar>
ReflectionOutput<Scalar> ReflectionEnhancement<Scalar>::operator()(const Var<Scalar>& y, ReflectionProbe* probe) const {
  if (y.value().rank() != 4 || y.dim(1) != channels_) {
    throw ShapeError("RFE: expected (B, " + std::to_string(channels_) + ", h, w), got " + to_string(y.shape()));
  }
  const Index h = y.dim(2), w = y.dim(3);
  if (h < kMinimumSize || w < kMinimumSize) {
    throw ShapeError("RFE: input " + std::to_string(h) + "x" + std::to_string(w) + " is below the minimum " +
                     std::to_string(kMinimumSize) + "x" + std::to_string(kMinimumSize));
  }
  auto skip_of = [&](const Var<Scalar>& e, int index) {
    return (probe && probe->zero_skip == index) ? ops::scale(e, Scalar(0)) : e;
  };

  std::array<Var<Scalar>, 6> e;
  e[0] = stem_(y);
  for (std::size_t i = 1; i <= 5; ++i) {
    auto z = encoder_[i - 1](e[i - 1]);
    e[i] = i < 5 ? ops::max_pool2x2(z) : ops::resize_bilinear(z, 2 * z.dim(2), 2 * z.dim(3));
  }

  Var<Scalar> d = skip_of(e[5], 5);
  if (probe) {
    for (std::size_t i = 0; i < 6; ++i) probe->encoder_shapes[i] = e[i].shape();
    probe->decoder_shapes[0] = d.shape();
  }
  for (std::size_t j = 1; j <= 4; ++j) {
    const int skip_index = static_cast<int>(5 - j);
    auto skip = ops::resize_bilinear(skip_of(e[static_cast<std::size_t>(skip_index)], skip_index), d.dim(2), d.dim(3));
    const auto& block = decoder_[j - 1];
    auto z = ops::relu(block.bn(block.deconv(ops::concat_channels<Scalar>({d, skip}))));
    d = j < 4 ? ops::resize_bilinear(z, 2 * z.dim(2), 2 * z.dim(3)) : refine_(z);
    if (probe) probe->decoder_shapes[j] = d.shape();
  }
  d = ops::resize_bilinear(d, h, w);

  auto head = output_(d);
  ReflectionOutput<Scalar> out;
  out.reflection_logits = ops::slice_channels(head, 0, 2);
  out.enhanced = ops::add(y, project_(ops::slice_channels(head, 2, kFeatureChannels)));
  return out;
}

std::vector<std::int32_t> extract_reflective_pseudo_gt(std::span<const std::int32_t> semantic,
                                                       const std::set<std::int32_t>& reflective) {
  static std::atomic<bool> warned{false};
  if (reflective.empty() && !warned.exchange(true)) {
    std::clog << "warning: no reflective classes configured; reflection supervision is all background\n";
  }
  std::vector<std::int32_t> out(semantic.size());
  for (std::size_t i = 0; i < semantic.size(); ++i) out[i] = reflective.contains(semantic[i]) ? 1 : 0;
  return out;
}

template class ReflectionEnhancement<float>;
template class ReflectionEnhancement<double>;

}  // namespace transcues
