#include "transcues/encoder.hpp"

#include <algorithm>
#include <map>

namespace transcues {
namespace {

struct PresetRow {
  BackboneFamily family;
  std::array<int, 4> depths;
  std::array<int, 4> channels;
  std::array<int, 4> mlp_ratios;
  std::array<int, 4> heads;
  int embed_channel;
};

BackboneConfig expand(std::string name, const PresetRow& row) {
  static constexpr std::array<int, 4> kStrides{4, 2, 2, 2};
  static constexpr std::array<int, 4> kSrRatios{8, 4, 2, 1};
  BackboneConfig cfg;
  cfg.variant_name = std::move(name);
  cfg.family = row.family;
  cfg.embed_channel = row.embed_channel;
  for (std::size_t i = 0; i < 4; ++i) {
    cfg.stages[i] = StageConfig{kStrides[i], row.channels[i], row.depths[i], kSrRatios[i], row.heads[i], row.mlp_ratios[i]};
  }
  return cfg;
}

const std::map<std::string, PresetRow, std::less<>>& presets() {
  static const std::array<int, 4> kWide{64, 128, 320, 512};
  static const std::array<int, 4> kRatios{8, 8, 4, 4};
  static const std::array<int, 4> kHeads{1, 2, 5, 8};
  static const std::map<std::string, PresetRow, std::less<>> table{
      {"pvt1-tiny", {BackboneFamily::pvt_v1, {2, 2, 2, 2}, kWide, kRatios, kHeads, 64}},
      {"pvt1-small", {BackboneFamily::pvt_v1, {3, 3, 6, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt1-medium", {BackboneFamily::pvt_v1, {3, 3, 18, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt1-large", {BackboneFamily::pvt_v1, {3, 8, 27, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt2-b1", {BackboneFamily::pvt_v2, {2, 2, 2, 2}, kWide, kRatios, kHeads, 64}},
      {"pvt2-b2", {BackboneFamily::pvt_v2, {3, 3, 6, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt2-b3", {BackboneFamily::pvt_v2, {3, 3, 18, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt2-b4", {BackboneFamily::pvt_v2, {3, 8, 27, 3}, kWide, kRatios, kHeads, 64}},
      {"pvt2-b5", {BackboneFamily::pvt_v2, {3, 6, 40, 3}, kWide, {4, 4, 4, 4}, kHeads, 64}},
      {"toy", {BackboneFamily::pvt_v2, {1, 1, 1, 1}, {8, 16, 32, 64}, {2, 2, 2, 2}, {1, 2, 4, 8}, 16}},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& backbone_variants() {
  static const std::vector<std::string> names{"pvt1-tiny", "pvt1-small", "pvt1-medium", "pvt1-large", "pvt2-b1",
                                              "pvt2-b2",   "pvt2-b3",    "pvt2-b4",     "pvt2-b5",    "toy"};
  return names;
}

BackboneConfig make_backbone_config(std::string_view variant_name) {
  const auto& table = presets();
  const auto it = table.find(variant_name);
  if (it == table.end()) {
    std::string valid;
    for (const auto& name : backbone_variants()) valid += (valid.empty() ? "" : ", ") + name;
    throw ConfigError("unknown backbone variant '" + std::string(variant_name) + "'; valid variants: " + valid);
  }
  BackboneConfig cfg = expand(it->first, it->second);
  cfg.validate();
  return cfg;
}

void BackboneConfig::validate() const {
  if (embed_channel <= 0) throw ConfigError("embed_channel must be positive");
  int previous = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = variant_name + " stage " + std::to_string(i + 1);
    if (s.patch_stride <= 0 || s.channels <= 0 || s.depth <= 0 || s.sr_ratio <= 0 || s.heads <= 0 ||
        s.mlp_ratio <= 0) {
      throw ConfigError(where + ": every stage field must be positive");
    }
    if (s.channels % s.heads != 0) {
      throw ConfigError(where + ": " + std::to_string(s.channels) + " channels not divisible by " +
                        std::to_string(s.heads) + " heads");
    }
    if (s.channels < previous) throw ConfigError(where + ": channel counts must be nondecreasing");
    previous = s.channels;
  }
}

int BackboneConfig::cumulative_stride(int stage) const {
  int stride = 1;
  for (int i = 0; i <= stage; ++i) stride *= stages[static_cast<std::size_t>(i)].patch_stride;
  return stride;
}

void check_encoder_input(const Shape& shape) {
  if (shape.size() != 4 || shape[1] != 3) {
    throw ShapeError("encoder expects a (batch, 3, H, W) image, got " + to_string(shape));
  }
  if (shape[2] % 32 != 0 || shape[3] % 32 != 0 || shape[2] == 0 || shape[3] == 0) {
    throw ShapeError("image height and width must be positive multiples of 32, got " + to_string(shape));
  }
}

template <typename Scalar>
SpatialReductionAttention<Scalar>::SpatialReductionAttention(const Scope<Scalar>& scope, Index channels, Index heads,
                                                             Index sr_ratio)
    : channels_(channels), heads_(heads), sr_ratio_(sr_ratio) {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  query_ = Linear<Scalar>(scope.child("q"), channels, channels);
  key_ = Linear<Scalar>(scope.child("k"), channels, channels);
  value_ = Linear<Scalar>(scope.child("v"), channels, channels);
  proj_ = Linear<Scalar>(scope.child("proj"), channels, channels);
  if (sr_ratio > 1) {
    reduce_ = Conv2d<Scalar>(scope.child("sr"), channels, channels, sr_ratio, {sr_ratio, 0, 1});
    reduce_norm_ = LayerNorm<Scalar>(scope.child("sr_norm"), channels);
  }
}

template <typename Scalar>
Var<Scalar> SpatialReductionAttention<Scalar>::operator()(const Var<Scalar>& tokens, Index grid_h, Index grid_w,
                                                          AttentionProbe<Scalar>* probe) const {
  if (tokens.dim(1) != grid_h * grid_w) {
    throw ShapeError("attention: " + std::to_string(tokens.dim(1)) + " tokens for a " + std::to_string(grid_h) +
                     "x" + std::to_string(grid_w) + " grid");
  }
  Var<Scalar> source = tokens;
  Index kh = grid_h, kw = grid_w;
  if (sr_ratio_ > 1) {
    if (grid_h < sr_ratio_ || grid_w < sr_ratio_) {
      throw ShapeError("attention: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                       " smaller than reduction ratio " + std::to_string(sr_ratio_));
    }
    auto reduced = reduce_(ops::tokens_to_nchw(tokens, grid_h, grid_w));
    kh = reduced.dim(2);
    kw = reduced.dim(3);
    source = reduce_norm_(ops::nchw_to_tokens(reduced));
  }
  auto q = query_(tokens);
  auto k = key_(source);
  auto v = value_(source);
  auto out = ops::attention(q, k, v, heads_, probe ? &probe->weights : nullptr);
  if (probe) {
    probe->key_grid_height = kh;
    probe->key_grid_width = kw;
  }
  return proj_(out);
}

template <typename Scalar>
TransformerBlock<Scalar>::TransformerBlock(const Scope<Scalar>& scope, Index channels, Index heads, Index sr_ratio,
                                           Index mlp_ratio, bool depthwise_ffn)
    : norm1_(scope.child("norm1"), channels),
      norm2_(scope.child("norm2"), channels),
      attn_(scope.child("attn"), channels, heads, sr_ratio),
      fc1_(scope.child("fc1"), channels, channels * mlp_ratio),
      fc2_(scope.child("fc2"), channels * mlp_ratio, channels),
      depthwise_ffn_(depthwise_ffn) {
  if (depthwise_ffn) dwconv_ = DepthwiseConv2d<Scalar>(scope.child("dwconv"), channels * mlp_ratio);
}

template <typename Scalar>
Var<Scalar> TransformerBlock<Scalar>::operator()(const Var<Scalar>& tokens, Index grid_h, Index grid_w,
                                                 AttentionProbe<Scalar>* probe) const {
  auto x = ops::add(tokens, attn_(norm1_(tokens), grid_h, grid_w, probe));
  auto hidden = fc1_(norm2_(x));
  if (depthwise_ffn_) {
    hidden = ops::nchw_to_tokens(dwconv_(ops::tokens_to_nchw(hidden, grid_h, grid_w)));
  }
  return ops::add(x, fc2_(ops::gelu(hidden)));
}

template <typename Scalar>
PyramidEncoder<Scalar>::PyramidEncoder(const Scope<Scalar>& scope, const BackboneConfig& config, Index resolution)
    : config_(config) {
  config_.validate();
  if (resolution <= 0 || resolution % 32 != 0) {
    throw ConfigError("encoder resolution must be a positive multiple of 32, got " + std::to_string(resolution));
  }
  const bool v2 = config_.family == BackboneFamily::pvt_v2;
  Index in_channels = 3;
  for (int i = 0; i < 4; ++i) {
    const auto& sc = config_.stages[static_cast<std::size_t>(i)];
    auto& stage = stages_[static_cast<std::size_t>(i)];
    const auto s = scope.child("stage", i + 1);
    const Index stride = sc.patch_stride;
    // Overlapping embedding (kernel 2S-1, padding S-1) for PVTv2; disjoint
    // S x S patches for PVTv1.
    const Index kernel = v2 ? 2 * stride - 1 : stride;
    const Index padding = v2 ? stride - 1 : 0;
    stage.patch_embed = Conv2d<Scalar>(s.child("patch_embed"), in_channels, sc.channels, kernel, {stride, padding, 1});
    stage.patch_norm = LayerNorm<Scalar>(s.child("patch_norm"), sc.channels);
    const Index grid = resolution / config_.cumulative_stride(i);
    stage.pos_embed = s.parameter(
        "pos_embed", init::truncated_normal<Scalar>({1, sc.channels, grid, grid}, 0.02, scope.store().rng()));
    for (int l = 0; l < sc.depth; ++l) {
      stage.blocks.emplace_back(s.child("block", l), sc.channels, sc.heads, sc.sr_ratio, sc.mlp_ratio, v2);
    }
    stage.norm = LayerNorm<Scalar>(s.child("norm"), sc.channels);
    in_channels = sc.channels;
  }
}

template <typename Scalar>
FeaturePyramid<Scalar> PyramidEncoder<Scalar>::operator()(const Var<Scalar>& image) const {
  check_encoder_input(image.shape());
  FeaturePyramid<Scalar> pyramid;
  Var<Scalar> x = image;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& stage = stages_[i];
    auto embedded = stage.patch_embed(x);
    const Index h = embedded.dim(2), w = embedded.dim(3);
    auto tokens = stage.patch_norm(ops::nchw_to_tokens(embedded));
    auto pos = ops::nchw_to_tokens(ops::resize_bilinear(stage.pos_embed, h, w));
    tokens = ops::add_broadcast_batch(tokens, pos);
    for (const auto& block : stage.blocks) tokens = block(tokens, h, w);
    x = ops::tokens_to_nchw(stage.norm(tokens), h, w);
    pyramid.levels[i] = x;
  }
  return pyramid;
}

template class SpatialReductionAttention<float>;
template class SpatialReductionAttention<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class PyramidEncoder<float>;
template class PyramidEncoder<double>;

}  // namespace transcues
