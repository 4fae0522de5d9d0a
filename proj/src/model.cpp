#include "transcues/model.hpp"

namespace transcues {

std::string_view to_string(ModuleOrder order) {
  switch (order) {
    case ModuleOrder::bfe_then_rfe: return "bfe_then_rfe";
    case ModuleOrder::rfe_then_bfe: return "rfe_then_bfe";
    case ModuleOrder::parallel: return "parallel";
  }
  return "?";
}

ModuleOrder parse_module_order(std::string_view text) {
  for (auto o : {ModuleOrder::bfe_then_rfe, ModuleOrder::rfe_then_bfe, ModuleOrder::parallel}) {
    if (text == to_string(o)) return o;
  }
  throw ConfigError("unknown module order '" + std::string(text) +
                    "'; expected bfe_then_rfe, rfe_then_bfe or parallel");
}

std::string_view to_string(BoundaryTarget target) {
  return target == BoundaryTarget::boundary_head ? "boundary_head" : "semantic_foreground";
}

BoundaryTarget parse_boundary_target(std::string_view text) {
  if (text == "boundary_head") return BoundaryTarget::boundary_head;
  if (text == "semantic_foreground") return BoundaryTarget::semantic_foreground;
  throw ConfigError("unknown boundary target '" + std::string(text) +
                    "'; expected boundary_head or semantic_foreground");
}

template <typename Scalar>
TransCuesModel<Scalar>::TransCuesModel(const ModelConfig& config)
    : config_(config),
      backbone_(make_backbone_config(config.backbone)),
      store_(std::make_unique<ParameterStore<Scalar>>(config.seed)) {
  if (config_.embed_channel > 0) backbone_.embed_channel = config_.embed_channel;
  config_.embed_channel = backbone_.embed_channel;
  backbone_.validate();
  Scope<Scalar> root(*store_);
  const Index e = backbone_.embed_channel;
  encoder_.emplace(root.child("encoder"), backbone_, config_.pos_resolution);
  decoder_.emplace(root.child("decoder"), backbone_, e);
  head_.emplace(root.child("head"), e, config_.n_class);
  if (config_.bfe_enabled) bfe_.emplace(root.child("bfe"), e);
  if (config_.rfe_enabled) rfe_.emplace(root.child("rfe"), e);
  if (config_.bfe_enabled && config_.rfe_enabled && config_.order == ModuleOrder::parallel) {
    fuse_.emplace(root.child("fuse"), 2 * e, e, 1, ops::ConvGeometry{}, true, ConvInit::projection);
  }
}

template <typename Scalar>
ModelOutput<Scalar> TransCuesModel<Scalar>::forward(const Var<Scalar>& images) const {
  ModelOutput<Scalar> out;
  Var<Scalar> x = (*decoder_)((*encoder_)(images));
  auto apply_bfe = [&](const Var<Scalar>& in) {
    auto r = (*bfe_)(in);
    out.boundary_logits = r.boundary_logits;
    return r.enhanced;
  };
  auto apply_rfe = [&](const Var<Scalar>& in) {
    auto r = (*rfe_)(in);
    out.reflection_logits = r.reflection_logits;
    return r.enhanced;
  };
  if (bfe_ && rfe_) {
    switch (config_.order) {
      case ModuleOrder::bfe_then_rfe: x = apply_rfe(apply_bfe(x)); break;
      case ModuleOrder::rfe_then_bfe: x = apply_bfe(apply_rfe(x)); break;
      case ModuleOrder::parallel: x = (*fuse_)(ops::concat_channels<Scalar>({apply_bfe(x), apply_rfe(x)})); break;
    }
  } else if (bfe_) {
    x = apply_bfe(x);
  } else if (rfe_) {
    x = apply_rfe(x);
  }
  out.features = x;
  out.logits = (*head_)(x, images.dim(2), images.dim(3));
  return out;
}

template <typename Scalar>
LossResult<Scalar> compute_loss(const ModelOutput<Scalar>& out, const LabelBatch& gt, const LossSettings& settings) {
  settings.weights.validate();
  const auto& w = settings.weights;
  Var<Scalar> total;
  auto add_term = [&](double weight, auto&& evaluate) -> double {
    if (weight > 0) {
      Var<Scalar> term = evaluate();
      if (!term.defined()) return 0.0;
      auto scaled = ops::scale(term, static_cast<Scalar>(weight));
      total = total.defined() ? ops::add(total, scaled) : scaled;
      return static_cast<double>(term.value()[0]);
    }
    NoGradGuard guard;
    Var<Scalar> term = evaluate();
    return term.defined() ? static_cast<double>(term.value()[0]) : 0.0;
  };

  const double semantic = add_term(w.alpha, [&] { return semantic_loss(out.logits, gt); });

  const double boundary = add_term(w.beta, [&]() -> Var<Scalar> {
    Var<Scalar> mask;
    if (settings.boundary_target == BoundaryTarget::boundary_head) {
      if (!out.boundary_logits.defined()) return {};
      mask = ops::resize_bilinear(ops::sigmoid(out.boundary_logits), gt.height, gt.width);
    } else {
      auto background = ops::slice_channels(ops::softmax_channels(out.logits), 0, 1);
      mask = ops::add_scalar(ops::scale(background, Scalar(-1)), Scalar(1));
    }
    return boundary_loss(mask, Var<Scalar>(foreground_mask<Scalar>(gt)));
  });

  const double reflection = add_term(w.gamma, [&]() -> Var<Scalar> {
    if (!out.reflection_logits.defined()) return {};
    return reflection_loss(out.reflection_logits, gt, settings.reflective_ids);
  });

  if (!total.defined()) total = Var<Scalar>(Tensor<Scalar>(Shape{1}));
  return {total, total_loss(semantic, boundary, reflection, w)};
}

template class TransCuesModel<float>;
template class TransCuesModel<double>;
template LossResult<float> compute_loss(const ModelOutput<float>&, const LabelBatch&, const LossSettings&);
template LossResult<double> compute_loss(const ModelOutput<double>&, const LabelBatch&, const LossSettings&);

}  // namespace transcues
