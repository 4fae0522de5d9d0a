#include "transcues/boundary.hpp"

namespace transcues {
namespace {

thread_local bool corrupt_sobel_backward = false;

using Kernel3 = std::array<std::array<double, 3>, 3>;

constexpr Kernel3 kSobelX{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
constexpr Kernel3 kSobelY{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};

template <typename Scalar>
void correlate3x3(const Scalar* in, Index planes, Index h, Index w, const Kernel3& k, Scalar* out) {
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = in + p * h * w;
    Scalar* dst = out + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        Scalar acc = 0;
        for (int i = 0; i < 3; ++i) {
          const Index yy = y + i - 1;
          if (yy < 0 || yy >= h) continue;
          for (int j = 0; j < 3; ++j) {
            const Index xx = x + j - 1;
            if (xx < 0 || xx >= w || k[i][j] == 0) continue;
            acc += static_cast<Scalar>(k[i][j]) * src[yy * w + xx];
          }
        }
        dst[y * w + x] = acc;
      }
    }
  }
}

// Adjoint of correlate3x3 (accumulating).
template <typename Scalar>
void correlate3x3_adjoint(const Scalar* g, Index planes, Index h, Index w, const Kernel3& k, Scalar* gin) {
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = g + p * h * w;
    Scalar* dst = gin + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Scalar gv = src[y * w + x];
        for (int i = 0; i < 3; ++i) {
          const Index yy = y + i - 1;
          if (yy < 0 || yy >= h) continue;
          for (int j = 0; j < 3; ++j) {
            const Index xx = x + j - 1;
            if (xx < 0 || xx >= w) continue;
            dst[yy * w + xx] += static_cast<Scalar>(k[i][j]) * gv;
          }
        }
      }
    }
  }
}

template <typename Scalar>
Var<Scalar> signed_sobel(const Var<Scalar>& x, const Kernel3& kernel) {
  if (x.value().rank() != 4) throw ShapeError("sobel: expected (B, C, h, w), got " + to_string(x.shape()));
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<Scalar> out(x.shape());
  correlate3x3(x.value().data(), planes, h, w, kernel, out.data());
  auto nx = x.node();
  return make_result<Scalar>(std::move(out), {x}, [nx, planes, h, w, kernel](const Tensor<Scalar>& g) {
    Kernel3 k = kernel;
    if (corrupt_sobel_backward) {
      k[0][0] *= 1.5;
      k[2][2] *= 0.5;
    }
    correlate3x3_adjoint(g.data(), planes, h, w, k, nx->grad_buffer().data());
  });
}

}  // namespace

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> sobel_gradients(const Var<Scalar>& mask) {
  return {ops::abs(signed_sobel(mask, kSobelX)), ops::abs(signed_sobel(mask, kSobelY))};
}

template <typename Scalar>
Var<Scalar> gradient_combine(const Var<Scalar>& a, const Var<Scalar>& b, Scalar floor) {
  return ops::clamp_min(ops::scale(ops::add(a, b), Scalar(0.5)), floor);
}

template <typename Scalar>
BoundaryEnhancement<Scalar>::BoundaryEnhancement(const Scope<Scalar>& scope, Index channels) : channels_(channels) {
  branches_[0] = ConvBnRelu<Scalar>(scope.child("branch1"), channels, channels, 1, {1, 0, 1});
  for (std::size_t i = 0; i < kDilations.size(); ++i) {
    const Index d = kDilations[i];
    branches_[i + 1] =
        ConvBnRelu<Scalar>(scope.child("branch", static_cast<int>(i) + 2), channels, channels, 3, {1, d, d});
  }
  fuse_ = Conv2d<Scalar>(scope.child("fuse"), channels, channels, 1);
  boundary_head_ = Conv2d<Scalar>(scope.child("boundary_head"), channels, 1, 1, {}, true, ConvInit::projection);
}

template <typename Scalar>
BoundaryEnhanced<Scalar> BoundaryEnhancement<Scalar>::operator()(const Var<Scalar>& x) const {
  if (x.value().rank() != 4 || x.dim(1) != channels_) {
    throw ShapeError("BFE: expected (B, " + std::to_string(channels_) + ", h, w), got " + to_string(x.shape()));
  }
  Var<Scalar> branch_sum = branches_[0](x);
  for (std::size_t i = 1; i < branches_.size(); ++i) branch_sum = ops::add(branch_sum, branches_[i](x));
  BoundaryEnhanced<Scalar> out;
  out.fused = fuse_(branch_sum);
  out.boundary_logits = boundary_head_(out.fused);
  out.enhanced = ops::mul(ops::add(out.fused, x), x);
  return out;
}

namespace testing {

ScopedSobelBackwardCorruption::ScopedSobelBackwardCorruption() : previous_(corrupt_sobel_backward) {
  corrupt_sobel_backward = true;
}
ScopedSobelBackwardCorruption::~ScopedSobelBackwardCorruption() { corrupt_sobel_backward = previous_; }

}  // namespace testing

template std::pair<Var<float>, Var<float>> sobel_gradients(const Var<float>&);
template std::pair<Var<double>, Var<double>> sobel_gradients(const Var<double>&);
template Var<float> gradient_combine(const Var<float>&, const Var<float>&, float);
template Var<double> gradient_combine(const Var<double>&, const Var<double>&, double);
template class BoundaryEnhancement<float>;
template class BoundaryEnhancement<double>;

}  // namespace transcues
