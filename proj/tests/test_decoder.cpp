#include "support.hpp"

#include "transcues/decoder.hpp"
#include "transcues/errors.hpp"
#include "transcues/model.hpp"

using namespace tc;

namespace {

FeaturePyramid<double> random_pyramid(Gen& gen, Index batch, const BackboneConfig& cfg, Index size) {
  FeaturePyramid<double> p;
  for (int i = 0; i < 4; ++i) {
    const Index s = size / (4 << i);
    p.levels[static_cast<std::size_t>(i)] =
        Var<double>(gen.tensor({batch, cfg.stages[static_cast<std::size_t>(i)].channels, s, s}), true);
  }
  return p;
}

}  // namespace

TEST_CASE("decoder fuses the toy pyramid to stride 4") {
  const auto cfg = make_backbone_config("toy");
  ParameterStore<double> store(1);
  FeatureParsingDecoder<double> dec(Scope<double>(store, "decoder"), cfg, 16);
  Gen gen(2);
  auto pyramid = random_pyramid(gen, 2, cfg, 64);
  const auto fused = dec(pyramid);
  CHECK(fused.shape() == Shape{2, 16, 16, 16});

  SUBCASE("gradient reaches every pyramid level") {
    ops::sum(ops::mul(fused, Var<double>(gen.tensor(fused.shape())))).backward();
    for (const auto& level : pyramid.levels) {
      REQUIRE(level.has_grad());
      CHECK(level.grad().array().abs().maxCoeff() > 0);
    }
  }
  SUBCASE("zeroing the coarsest level changes the output") {
    auto zeroed = pyramid;
    zeroed.levels[3] = Var<double>(Tensor<double>(pyramid.levels[3].shape()));
    CHECK(max_abs_diff(dec(zeroed).value(), fused.value()) > 0);
  }
  SUBCASE("mismatched batch sizes are rejected") {
    auto bad = pyramid;
    bad.levels[2] = Var<double>(gen.tensor({1, 32, 4, 4}));
    CHECK_THROWS_AS(dec(bad), ShapeError);
  }
}

TEST_CASE("batch permutation permutes decoder outputs") {
  const auto cfg = make_backbone_config("toy");
  ParameterStore<double> store(3);
  FeatureParsingDecoder<double> dec(Scope<double>(store), cfg, 16);
  Gen gen(4);
  const auto pyramid = random_pyramid(gen, 3, cfg, 32);
  FeaturePyramid<double> swapped;
  const std::array<Index, 3> perm{2, 0, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& v = pyramid.levels[i].value();
    Tensor<double> t(v.shape());
    const Index per = v.size() / 3;
    for (Index n = 0; n < 3; ++n) t.array().segment(n * per, per) = v.array().segment(perm[n] * per, per);
    swapped.levels[i] = Var<double>(t);
  }
  const auto a = dec(pyramid).value(), b = dec(swapped).value();
  const Index per = a.size() / 3;
  for (Index n = 0; n < 3; ++n) {
    CHECK((b.array().segment(n * per, per) - a.array().segment(perm[n] * per, per)).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("segmentation head upsamples logits to the image") {
  ParameterStore<double> store(5);
  Gen gen(6);
  SegmentationHead<double> head(Scope<double>(store), 16, 3);
  const auto logits = head(Var<double>(gen.tensor({2, 16, 16, 16})), 64, 64);
  CHECK(logits.shape() == Shape{2, 3, 64, 64});
  CHECK_THROWS_AS(head(Var<double>(gen.tensor({2, 16, 16, 16})), 60, 64), ShapeError);
  CHECK_THROWS_AS(SegmentationHead<double>(Scope<double>(store), 16, 1), ConfigError);

  // argmax of the logits is a valid class id everywhere
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x) {
        Index best = 0;
        for (Index c = 1; c < 3; ++c)
          if (logits.value().at(n, c, y, x) > logits.value().at(n, best, y, x)) best = c;
        CHECK((best >= 0 && best < 3));
      }
}

TEST_CASE("pvt2-b1 composes to a 12-class full-resolution map at 512") {
  ModelConfig cfg;
  cfg.backbone = "pvt2-b1";
  cfg.n_class = 12;
  cfg.resolution = 512;
  cfg.bfe_enabled = cfg.rfe_enabled = false;
  TransCuesModel<float> model(cfg);
  model.set_training(false);
  NoGradGuard guard;
  const auto out = model.forward(Var<float>(Tensor<float>({1, 3, 512, 512}, 0.5f)));
  CHECK(out.features.shape() == Shape{1, 64, 128, 128});
  CHECK(out.logits.shape() == Shape{1, 12, 512, 512});
}

TEST_CASE("encoder, decoder and head compose for every preset") {
  for (const auto& name : backbone_variants()) {
    CAPTURE(name);
    ModelConfig cfg;
    cfg.backbone = name;
    cfg.n_class = 3;
    cfg.bfe_enabled = cfg.rfe_enabled = false;
    TransCuesModel<float> model(cfg);
    NoGradGuard guard;
    const auto out = model.forward(Var<float>(Tensor<float>({1, 3, 32, 64}, 0.25f)));
    CHECK(out.logits.shape() == Shape{1, 3, 32, 64});
  }
}
