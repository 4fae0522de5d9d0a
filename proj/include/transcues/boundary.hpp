#pragma once

#include <array>
#include <utility>

#include "transcues/nn.hpp"

namespace transcues {

// Noise floor of the gradient-map combiner.
inline constexpr double kGradientFloor = 0.01;

template <typename Scalar>
struct BoundaryEnhanced {
  Var<Scalar> enhanced;         // same shape as the input features
  Var<Scalar> boundary_logits;  // (B, 1, h, w), pre-sigmoid
  Var<Scalar> fused;            // fusion output, kept for inspection
};

// Boundary Feature Enhancement: five parallel ReLU(BN(Conv)) context
// branches (1x1 and 3x3 with dilation 1, 2, 4, 8), summed and fused by a
// 1x1 convolution. The fused map drives a 1x1 boundary head and enhances
// the input as (fused + x) * x.
template <typename Scalar>
class BoundaryEnhancement {
 public:
  static constexpr std::array<Index, 4> kDilations{1, 2, 4, 8};

  BoundaryEnhancement(const Scope<Scalar>& scope, Index channels);

  BoundaryEnhanced<Scalar> operator()(const Var<Scalar>& x) const;

 private:
  Index channels_;
  std::array<ConvBnRelu<Scalar>, 5> branches_;
  Conv2d<Scalar> fuse_;
  Conv2d<Scalar> boundary_head_;
};

// Absolute Sobel responses (|d/dx|, |d/dy|) of a (B, C, h, w) map,
// correlation with zero padding 1.
template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> sobel_gradients(const Var<Scalar>& mask);

// max((a + b) / 2, floor), element-wise.
template <typename Scalar>
Var<Scalar> gradient_combine(const Var<Scalar>& a, const Var<Scalar>& b, Scalar floor = Scalar(kGradientFloor));

namespace testing {

// While alive, the Sobel backward pass on this thread uses a perturbed
// kernel. Lets gradient checks prove they can fail.
class ScopedSobelBackwardCorruption {
 public:
  ScopedSobelBackwardCorruption();
  ~ScopedSobelBackwardCorruption();
  ScopedSobelBackwardCorruption(const ScopedSobelBackwardCorruption&) = delete;
  ScopedSobelBackwardCorruption& operator=(const ScopedSobelBackwardCorruption&) = delete;

 private:
  bool previous_;
};

}  // namespace testing
}  // namespace transcues
