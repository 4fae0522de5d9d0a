#pragma once

#include <cstdint>
#include <vector>

#include "transcues/config.hpp"
#include "transcues/nn.hpp"

namespace transcues {

// Decoupled weight decay Adam, PyTorch semantics:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& config) : config_(config) {}

  // Parameters without a gradient are left untouched (their moments too).
  void step(std::vector<NamedParameter<Scalar>>& parameters);

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return step_; }
  std::vector<Tensor<Scalar>>& first_moments() { return m_; }
  std::vector<Tensor<Scalar>>& second_moments() { return v_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Tensor<Scalar>> m, std::vector<Tensor<Scalar>> v);

 private:
  OptimizerConfig config_;
  std::int64_t step_ = 0;
  std::vector<Tensor<Scalar>> m_, v_;
};

}  // namespace transcues
