#include "transcues/losses.hpp"

#include <string>

#include "transcues/reflection.hpp"

namespace transcues {

void LossWeights::validate() const {
  auto check = [](const char* name, double v) {
    if (!(v >= 0.0)) throw ConfigError(std::string("loss weight ") + name + " must be >= 0, got " + std::to_string(v));
  };
  check("alpha", alpha);
  check("beta", beta);
  check("gamma", gamma);
}

namespace {

template <typename Scalar>
void check_labels(const Var<Scalar>& logits, const LabelBatch& gt, const char* what) {
  if (static_cast<Index>(gt.labels.size()) != gt.pixels()) {
    throw ShapeError(std::string(what) + ": label buffer holds " + std::to_string(gt.labels.size()) +
                     " ids for a batch of " + std::to_string(gt.pixels()) + " pixels");
  }
  if (logits.value().rank() != 4 || logits.dim(0) != gt.batch) {
    throw ShapeError(std::string(what) + ": logits " + to_string(logits.shape()) + " do not match a batch of " +
                     std::to_string(gt.batch));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> semantic_loss(const Var<Scalar>& logits, const LabelBatch& gt) {
  check_labels(logits, gt, "semantic_loss");
  if (logits.dim(2) != gt.height || logits.dim(3) != gt.width) {
    throw ShapeError("semantic_loss: logits " + to_string(logits.shape()) + " vs labels " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  return ops::softmax_cross_entropy(logits, std::span<const std::int32_t>(gt.labels));
}

template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& pred, const Var<Scalar>& target, Scalar smoothing) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("dice_loss: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  const auto& p = pred.value().array();
  const auto& t = target.value().array();
  const Scalar inter = (p * t).sum();
  const Scalar num = Scalar(2) * inter + smoothing;
  const Scalar den = p.sum() + t.sum() + smoothing;
  Tensor<Scalar> out(Shape{1}, Scalar(1) - num / den);
  auto np = pred.node(), nt = target.node();
  return make_result<Scalar>(std::move(out), {pred, target}, [np, nt, num, den](const Tensor<Scalar>& g) {
    const Scalar g0 = g[0] / (den * den);
    if (np->requires_grad) np->grad_buffer().array() -= g0 * (Scalar(2) * den * nt->value.array() - num);
    if (nt->requires_grad) nt->grad_buffer().array() -= g0 * (Scalar(2) * den * np->value.array() - num);
  });
}

template <typename Scalar>
Var<Scalar> boundary_loss(const Var<Scalar>& pred_mask, const Var<Scalar>& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape() || pred_mask.value().rank() != 4 || pred_mask.dim(1) != 1) {
    throw ShapeError("boundary_loss: expected matching (B, 1, H, W) masks, got " + to_string(pred_mask.shape()) +
                     " and " + to_string(gt_mask.shape()));
  }
  auto [px, py] = sobel_gradients(pred_mask);
  auto [gx, gy] = sobel_gradients(gt_mask);
  return dice_loss(gradient_combine(px, py), gradient_combine(gx, gy));
}

template <typename Scalar>
Var<Scalar> reflection_loss(const Var<Scalar>& reflection_logits, const LabelBatch& gt,
                            const std::set<std::int32_t>& reflective_ids) {
  check_labels(reflection_logits, gt, "reflection_loss");
  if (reflection_logits.dim(1) != 2) {
    throw ShapeError("reflection_loss: expected 2-channel logits, got " + to_string(reflection_logits.shape()));
  }
  const auto pseudo = extract_reflective_pseudo_gt(gt.labels, reflective_ids);
  auto logits = ops::resize_bilinear(reflection_logits, gt.height, gt.width);
  return ops::softmax_cross_entropy(logits, std::span<const std::int32_t>(pseudo));
}

template <typename Scalar>
Tensor<Scalar> foreground_mask(const LabelBatch& gt) {
  Tensor<Scalar> out({gt.batch, 1, gt.height, gt.width});
  for (Index i = 0; i < out.size(); ++i) out[i] = gt.labels[static_cast<std::size_t>(i)] != 0 ? Scalar(1) : Scalar(0);
  return out;
}

LossBreakdown total_loss(double semantic, double boundary, double reflection, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out{semantic, boundary, reflection, 0.0};
  out.total = weights.alpha * semantic + weights.beta * boundary + weights.gamma * reflection;
  return out;
}

#define TRANSCUES_INSTANTIATE_LOSSES(S)                                                            \
  template Var<S> semantic_loss(const Var<S>&, const LabelBatch&);                                 \
  template Var<S> dice_loss(const Var<S>&, const Var<S>&, S);                                      \
  template Var<S> boundary_loss(const Var<S>&, const Var<S>&);                                     \
  template Var<S> reflection_loss(const Var<S>&, const LabelBatch&, const std::set<std::int32_t>&); \
  template Tensor<S> foreground_mask(const LabelBatch&);

TRANSCUES_INSTANTIATE_LOSSES(float)
TRANSCUES_INSTANTIATE_LOSSES(double)

}  // namespace transcues
