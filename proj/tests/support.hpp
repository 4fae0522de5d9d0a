#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "transcues/ops.hpp"

namespace tc = transcues;

// Hand-rolled generator for property tests.
struct Gen {
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

  template <typename S = double>
  tc::Tensor<S> tensor(tc::Shape shape, double lo = -1.0, double hi = 1.0) {
    tc::Tensor<S> t(std::move(shape));
    for (tc::Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(uniform(lo, hi));
    return t;
  }
  tc::Tensor<double> binary(tc::Shape shape, double p = 0.5) {
    tc::Tensor<double> t(std::move(shape));
    for (tc::Index i = 0; i < t.size(); ++i) t[i] = coin(p) ? 1.0 : 0.0;
    return t;
  }
  std::vector<std::int32_t> labels(std::size_t n, int n_class) {
    std::vector<std::int32_t> out(n);
    for (auto& v : out) v = integer(0, n_class - 1);
    return out;
  }

  std::mt19937_64 rng;
};

inline double max_abs_diff(const tc::Tensor<double>& a, const tc::Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.array() - b.array()).abs().maxCoeff();
}

// Largest relative error between the analytic gradient of sum(f(inputs) * R)
// (R a fixed random weighting) and central differences, over every input
// element.
inline double gradient_error(const std::function<tc::Var<double>(const std::vector<tc::Var<double>>&)>& f,
                             std::vector<tc::Tensor<double>> values, std::uint64_t seed = 7, double h = 1e-6) {
  Gen gen(seed);
  std::vector<tc::Var<double>> inputs;
  for (auto& v : values) inputs.emplace_back(v, true);
  const auto out = f(inputs);
  const tc::Var<double> weights(gen.tensor(out.shape()));
  const auto objective = [&](const std::vector<tc::Var<double>>& in) {
    return tc::ops::sum(tc::ops::mul(f(in), weights));
  };
  objective(inputs).backward();

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (tc::Index i = 0; i < values[k].size(); ++i) {
      std::vector<tc::Var<double>> probe;
      for (const auto& v : values) probe.emplace_back(v);
      auto plus = values[k], minus = values[k];
      plus[i] += h;
      minus[i] -= h;
      probe[k] = tc::Var<double>(plus);
      const double fp = objective(probe).value()[0];
      probe[k] = tc::Var<double>(minus);
      const double fm = objective(probe).value()[0];
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = inputs[k].has_grad() ? inputs[k].grad()[i] : 0.0;
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}
