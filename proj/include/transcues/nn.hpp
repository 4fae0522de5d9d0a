#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "transcues/ops.hpp"

namespace transcues {

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Tensor<Scalar> value;
};

// Owns every trainable tensor and running statistic of one model instance,
// in registration order. Layers hold handles into the store.
template <typename Scalar>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Var<Scalar> parameter(std::string name, Tensor<Scalar> init) {
    Var<Scalar> var(std::move(init), true);
    parameters_.push_back({std::move(name), var});
    return var;
  }

  // Buffers live in a deque so references stay valid while more are added.
  Tensor<Scalar>& buffer(std::string name, Tensor<Scalar> init) {
    buffers_.push_back({std::move(name), std::move(init)});
    return buffers_.back().value;
  }

  std::vector<NamedParameter<Scalar>>& parameters() { return parameters_; }
  const std::vector<NamedParameter<Scalar>>& parameters() const { return parameters_; }
  std::deque<NamedBuffer<Scalar>>& buffers() { return buffers_; }
  const std::deque<NamedBuffer<Scalar>>& buffers() const { return buffers_; }

  Index parameter_count(std::string_view prefix = {}) const {
    Index total = 0;
    for (const auto& p : parameters_) {
      if (p.name.starts_with(prefix)) total += p.var.size();
    }
    return total;
  }

  void zero_grad() {
    for (auto& p : parameters_) p.var.zero_grad();
  }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<NamedParameter<Scalar>> parameters_;
  std::deque<NamedBuffer<Scalar>> buffers_;
  bool training_ = true;
  std::mt19937_64 rng_;
};

// Hierarchical naming handle ("encoder.stage1.block0.attn.q.weight").
template <typename Scalar>
class Scope {
 public:
  Scope(ParameterStore<Scalar>& store, std::string prefix = {}) : store_(&store), prefix_(std::move(prefix)) {}

  Scope child(std::string_view name) const {
    return Scope(*store_, prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name));
  }
  Scope child(std::string_view name, int index) const { return child(std::string(name) + std::to_string(index)); }

  Var<Scalar> parameter(std::string_view name, Tensor<Scalar> init) const {
    return store_->parameter(child(name).prefix_, std::move(init));
  }
  Tensor<Scalar>& buffer(std::string_view name, Tensor<Scalar> init) const {
    return store_->buffer(child(name).prefix_, std::move(init));
  }

  ParameterStore<Scalar>& store() const { return *store_; }
  const std::string& prefix() const { return prefix_; }

 private:
  ParameterStore<Scalar>* store_;
  std::string prefix_;
};

namespace init {

// Normal(0, std) resampled until it falls inside +-2 std.
template <typename Scalar>
Tensor<Scalar> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (Index i = 0; i < t.size(); ++i) {
    double v = dist(rng);
    while (std::abs(v) > 2.0 * std) v = dist(rng);
    t[i] = static_cast<Scalar>(v);
  }
  return t;
}

// Kaiming normal over fan-out, the convolution init used by PVT.
template <typename Scalar>
Tensor<Scalar> conv_fan_out(Shape shape, Index fan_out, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_out)));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

}  // namespace init

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const Scope<Scalar>& scope, Index in, Index out, bool bias = true) {
    weight_ = scope.parameter("weight", init::truncated_normal<Scalar>({out, in}, 0.02, scope.store().rng()));
    if (bias) bias_ = scope.parameter("bias", Tensor<Scalar>({out}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::linear(x, weight_, bias_); }
  const Var<Scalar>& weight() const { return weight_; }

 private:
  Var<Scalar> weight_, bias_;
};

// Spatial convolutions use the fan-out init; 1x1 projections that produce
// logits or residual updates use the small transformer init.
enum class ConvInit { fan_out, projection };

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Scope<Scalar>& scope, Index in, Index out, Index kernel, ops::ConvGeometry geometry = {},
         bool bias = true, ConvInit init = ConvInit::fan_out)
      : geometry_(geometry) {
    const Shape shape{out, in, kernel, kernel};
    weight_ = scope.parameter("weight", init == ConvInit::fan_out
                                            ? init::conv_fan_out<Scalar>(shape, kernel * kernel * out, scope.store().rng())
                                            : init::truncated_normal<Scalar>(shape, 0.02, scope.store().rng()));
    if (bias) bias_ = scope.parameter("bias", Tensor<Scalar>({out}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::conv2d(x, weight_, bias_, geometry_); }
  const Var<Scalar>& weight() const { return weight_; }

 private:
  Var<Scalar> weight_, bias_;
  ops::ConvGeometry geometry_;
};

template <typename Scalar>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const Scope<Scalar>& scope, Index in, Index out, Index kernel, ops::ConvGeometry geometry = {})
      : geometry_(geometry) {
    weight_ = scope.parameter(
        "weight", init::conv_fan_out<Scalar>({in, out, kernel, kernel}, kernel * kernel * out, scope.store().rng()));
    bias_ = scope.parameter("bias", Tensor<Scalar>({out}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::conv_transpose2d(x, weight_, bias_, geometry_); }

 private:
  Var<Scalar> weight_, bias_;
  ops::ConvGeometry geometry_;
};

template <typename Scalar>
class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(const Scope<Scalar>& scope, Index channels, Index kernel = 3) {
    weight_ = scope.parameter("weight",
                              init::conv_fan_out<Scalar>({channels, 1, kernel, kernel}, kernel * kernel, scope.store().rng()));
    bias_ = scope.parameter("bias", Tensor<Scalar>({channels}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::depthwise_conv2d(x, weight_, bias_); }

 private:
  Var<Scalar> weight_, bias_;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const Scope<Scalar>& scope, Index channels, Scalar eps = Scalar(1e-6)) : eps_(eps) {
    gamma_ = scope.parameter("weight", Tensor<Scalar>({channels}, Scalar(1)));
    beta_ = scope.parameter("bias", Tensor<Scalar>({channels}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::layer_norm(x, gamma_, beta_, eps_); }

 private:
  Var<Scalar> gamma_, beta_;
  Scalar eps_ = Scalar(1e-6);
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const Scope<Scalar>& scope, Index channels)
      : store_(&scope.store()),
        running_mean_(&scope.buffer("running_mean", Tensor<Scalar>({channels}))),
        running_var_(&scope.buffer("running_var", Tensor<Scalar>({channels}, Scalar(1)))) {
    gamma_ = scope.parameter("weight", Tensor<Scalar>({channels}, Scalar(1)));
    beta_ = scope.parameter("bias", Tensor<Scalar>({channels}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return ops::batch_norm2d(x, gamma_, beta_, *running_mean_, *running_var_, store_->training(), Scalar(0.1),
                             Scalar(1e-5));
  }

 private:
  ParameterStore<Scalar>* store_ = nullptr;
  Tensor<Scalar>* running_mean_ = nullptr;
  Tensor<Scalar>* running_var_ = nullptr;
  Var<Scalar> gamma_, beta_;
};

// Conv -> BN -> ReLU, the unit used by the boundary branches and the
// reflection encoder.
template <typename Scalar>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const Scope<Scalar>& scope, Index in, Index out, Index kernel, ops::ConvGeometry geometry)
      : conv_(scope.child("conv"), in, out, kernel, geometry, false), bn_(scope.child("bn"), out) {}
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::relu(bn_(conv_(x))); }

 private:
  Conv2d<Scalar> conv_;
  BatchNorm2d<Scalar> bn_;
};

}  // namespace transcues
