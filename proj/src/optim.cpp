#include "transcues/optim.hpp"

#include <cmath>

namespace transcues {

template <typename Scalar>
void AdamW<Scalar>::step(std::vector<NamedParameter<Scalar>>& parameters) {
  if (m_.empty()) {
    for (const auto& p : parameters) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }
  if (m_.size() != parameters.size()) throw ShapeError("AdamW: parameter list changed size");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const Scalar lr = static_cast<Scalar>(config_.lr);
  const Scalar decay = static_cast<Scalar>(1.0 - config_.lr * config_.weight_decay);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(b1, double(step_)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(b2, double(step_)));
  const Scalar eps = static_cast<Scalar>(config_.eps);
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    auto& var = parameters[i].var;
    if (!var.has_grad()) continue;
    auto& p = var.value_mut().array();
    const auto& g = var.grad().array();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    p *= decay;
    m = Scalar(b1) * m + Scalar(1 - b1) * g;
    v = Scalar(b2) * v + Scalar(1 - b2) * g.square();
    p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

template <typename Scalar>
void AdamW<Scalar>::restore(std::int64_t steps, std::vector<Tensor<Scalar>> m, std::vector<Tensor<Scalar>> v) {
  if (m.size() != v.size()) throw ShapeError("AdamW: moment lists differ in length");
  step_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace transcues
