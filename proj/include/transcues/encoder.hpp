#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "transcues/nn.hpp"

namespace transcues {

enum class BackboneFamily { pvt_v1, pvt_v2 };

struct StageConfig {
  int patch_stride = 4;
  int channels = 64;
  int depth = 2;
  int sr_ratio = 8;
  int heads = 1;
  int mlp_ratio = 8;
};

struct BackboneConfig {
  std::string variant_name;
  BackboneFamily family = BackboneFamily::pvt_v2;
  std::array<StageConfig, 4> stages{};
  int embed_channel = 64;

  // Throws ConfigError when a stage breaks the preset invariants.
  void validate() const;
  int cumulative_stride(int stage) const;
};

// Presets: pvt1-{tiny,small,medium,large}, pvt2-b{1..5}, toy.
BackboneConfig make_backbone_config(std::string_view variant_name);
const std::vector<std::string>& backbone_variants();

template <typename Scalar>
struct FeaturePyramid {
  std::array<Var<Scalar>, 4> levels;
};

// Records the attention matrix of the last forward call.
template <typename Scalar>
struct AttentionProbe {
  Tensor<Scalar> weights;   // (B, heads, queries, keys)
  Index key_grid_height = 0;
  Index key_grid_width = 0;
};

// Multi-head attention whose keys and values come from the token grid
// downsampled by a strided R x R convolution (followed by LayerNorm).
// With R = 1 the grid is untouched and this is plain self-attention.
template <typename Scalar>
class SpatialReductionAttention {
 public:
  SpatialReductionAttention() = default;
  SpatialReductionAttention(const Scope<Scalar>& scope, Index channels, Index heads, Index sr_ratio);

  // tokens: (B, h*w, C) -> (B, h*w, C)
  Var<Scalar> operator()(const Var<Scalar>& tokens, Index grid_h, Index grid_w,
                         AttentionProbe<Scalar>* probe = nullptr) const;

  Index heads() const { return heads_; }
  Index sr_ratio() const { return sr_ratio_; }

 private:
  Index channels_ = 0, heads_ = 1, sr_ratio_ = 1;
  Linear<Scalar> query_, key_, value_, proj_;
  Conv2d<Scalar> reduce_;
  LayerNorm<Scalar> reduce_norm_;
};

// Pre-norm transformer layer: x + SRA(LN(x)), then x + FFN(LN(x)).
// The PVTv2 feed-forward inserts a 3x3 depthwise convolution after the
// first projection.
template <typename Scalar>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const Scope<Scalar>& scope, Index channels, Index heads, Index sr_ratio, Index mlp_ratio,
                   bool depthwise_ffn);

  Var<Scalar> operator()(const Var<Scalar>& tokens, Index grid_h, Index grid_w,
                         AttentionProbe<Scalar>* probe = nullptr) const;

 private:
  LayerNorm<Scalar> norm1_, norm2_;
  SpatialReductionAttention<Scalar> attn_;
  Linear<Scalar> fc1_, fc2_;
  DepthwiseConv2d<Scalar> dwconv_;
  bool depthwise_ffn_ = false;
};

// Feature Extraction Module: four pyramid stages of patch embedding,
// positional table, transformer layers and a closing LayerNorm.
template <typename Scalar>
class PyramidEncoder {
 public:
  // `resolution` sizes the learned positional tables; other input sizes are
  // served by bilinear interpolation of the tables.
  PyramidEncoder(const Scope<Scalar>& scope, const BackboneConfig& config, Index resolution);

  // image: (B, 3, H, W) with H, W divisible by 32.
  FeaturePyramid<Scalar> operator()(const Var<Scalar>& image) const;

  const BackboneConfig& config() const { return config_; }

 private:
  struct Stage {
    Conv2d<Scalar> patch_embed;
    LayerNorm<Scalar> patch_norm;
    Var<Scalar> pos_embed;  // (1, C, h0, w0)
    std::vector<TransformerBlock<Scalar>> blocks;
    LayerNorm<Scalar> norm;
  };
  BackboneConfig config_;
  std::array<Stage, 4> stages_;
};

// Free-function form used by tests: validates the pyramid input contract.
void check_encoder_input(const Shape& image_shape);

}  // namespace transcues
