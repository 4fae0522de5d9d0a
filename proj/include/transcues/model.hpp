#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "transcues/boundary.hpp"
#include "transcues/decoder.hpp"
#include "transcues/encoder.hpp"
#include "transcues/losses.hpp"
#include "transcues/reflection.hpp"

namespace transcues {

enum class ModuleOrder { bfe_then_rfe, rfe_then_bfe, parallel };
std::string_view to_string(ModuleOrder order);
ModuleOrder parse_module_order(std::string_view text);

// Which prediction the boundary loss supervises: the BFE boundary head, or
// the semantic foreground probability 1 - P(background).
enum class BoundaryTarget { boundary_head, semantic_foreground };
std::string_view to_string(BoundaryTarget target);
BoundaryTarget parse_boundary_target(std::string_view text);

struct ModelConfig {
  std::string backbone = "toy";
  int embed_channel = 0;  // 0 selects the preset's width
  int n_class = 4;
  int resolution = 64;
  int pos_resolution = 224;  // input size the positional tables are laid out for
  bool bfe_enabled = true;
  bool rfe_enabled = true;
  ModuleOrder order = ModuleOrder::bfe_then_rfe;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct ModelOutput {
  Var<Scalar> logits;             // (B, n_class, H, W)
  Var<Scalar> features;           // decoder output after enhancement, (B, E, H/4, W/4)
  Var<Scalar> boundary_logits;    // (B, 1, H/4, W/4), undefined without BFE
  Var<Scalar> reflection_logits;  // (B, 2, H/4, W/4), undefined without RFE
};

// encoder -> decoder -> [BFE] -> [RFE] -> head. A disabled module is the
// identity on features. Modules are created in the order encoder, decoder,
// head, BFE, RFE, fuse, so toggling the enhancement modules never changes
// the initial weights of the rest.
template <typename Scalar>
class TransCuesModel {
 public:
  explicit TransCuesModel(const ModelConfig& config);

  ModelOutput<Scalar> forward(const Var<Scalar>& images) const;

  ParameterStore<Scalar>& store() { return *store_; }
  const ParameterStore<Scalar>& store() const { return *store_; }
  const ModelConfig& config() const { return config_; }
  const BackboneConfig& backbone() const { return backbone_; }
  void set_training(bool on) { store_->set_training(on); }

 private:
  ModelConfig config_;
  BackboneConfig backbone_;
  std::unique_ptr<ParameterStore<Scalar>> store_;
  std::optional<PyramidEncoder<Scalar>> encoder_;
  std::optional<FeatureParsingDecoder<Scalar>> decoder_;
  std::optional<SegmentationHead<Scalar>> head_;
  std::optional<BoundaryEnhancement<Scalar>> bfe_;
  std::optional<ReflectionEnhancement<Scalar>> rfe_;
  std::optional<Conv2d<Scalar>> fuse_;
};

struct LossSettings {
  LossWeights weights;
  BoundaryTarget boundary_target = BoundaryTarget::boundary_head;
  std::set<std::int32_t> reflective_ids;
};

template <typename Scalar>
struct LossResult {
  Var<Scalar> total;  // differentiable weighted sum of the active terms
  LossBreakdown breakdown;
};

// Terms with zero weight are still evaluated for logging but carry no graph.
// A term whose module is disabled reports 0.
template <typename Scalar>
LossResult<Scalar> compute_loss(const ModelOutput<Scalar>& out, const LabelBatch& gt, const LossSettings& settings);

}  // namespace transcues
