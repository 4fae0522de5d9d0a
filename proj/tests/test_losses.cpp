#include "support.hpp"
#include "oracles.hpp"

#include "transcues/errors.hpp"
#include "transcues/losses.hpp"
#include "transcues/reflection.hpp"

using namespace tc;
using V = Var<double>;
using T = Tensor<double>;

namespace {

double ce_oracle(const T& logits, const std::vector<std::int32_t>& labels) {
  const Index b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  double total = 0;
  for (Index n = 0; n < b; ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double z = 0;
        for (Index k = 0; k < c; ++k) z += std::exp(logits.at(n, k, y, x));
        const double p = std::exp(logits.at(n, labels[static_cast<std::size_t>((n * h + y) * w + x)], y, x)) / z;
        total += -std::log(p);
      }
  return total / double(b * h * w);
}

LabelBatch labels_of(Index b, Index h, Index w, std::vector<std::int32_t> v) { return {b, h, w, std::move(v)}; }

}  // namespace

TEST_CASE("semantic loss") {
  Gen gen(1);
  SUBCASE("perfect prediction") {
    T logits({1, 3, 2, 2});
    std::vector<std::int32_t> labels{0, 1, 2, 1};
    for (Index i = 0; i < 4; ++i) logits.at(0, labels[static_cast<std::size_t>(i)], i / 2, i % 2) = 60.0;
    CHECK(semantic_loss(V(logits), labels_of(1, 2, 2, labels)).value()[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform logits give ln n_class") {
    CHECK(semantic_loss(V(T({2, 4, 3, 3})), labels_of(2, 3, 3, gen.labels(18, 4))).value()[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("matches the per-pixel oracle") {
    for (int trial = 0; trial < 100; ++trial) {
      const auto logits = gen.tensor({1, 4, 4, 4}, -4, 4);
      const auto labels = gen.labels(16, 4);
      CHECK(std::abs(semantic_loss(V(logits), labels_of(1, 4, 4, labels)).value()[0] - ce_oracle(logits, labels)) <= 1e-6);
    }
  }
  SUBCASE("out-of-range ids name the value") {
    try {
      semantic_loss(V(T({1, 3, 1, 2})), labels_of(1, 1, 2, {0, 7}));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find('7') != std::string::npos);
    }
    CHECK_THROWS_AS(semantic_loss(V(T({1, 3, 1, 2})), labels_of(1, 1, 2, {0, -1})), DataError);
    CHECK_THROWS_AS(semantic_loss(V(T({1, 3, 1, 2})), labels_of(1, 1, 3, {0, 1, 1})), ShapeError);
  }
}

TEST_CASE("dice loss") {
  Gen gen(2);
  T p({2}), t({2}, 1.0);
  p[0] = 1;
  CHECK(dice_loss(V(p), V(t)).value()[0] == doctest::Approx(0.25).epsilon(1e-12));

  const auto m = gen.binary({1, 1, 5, 5});
  const double self = dice_loss(V(m), V(m)).value()[0];
  CHECK(self >= 0);
  CHECK(self <= 1.0 / (2 * m.array().sum() + 1.0) + 1e-12);

  T a({1, 1, 4, 4}), b({1, 1, 4, 4});
  for (Index i = 0; i < 8; ++i) a[i] = 1, b[i + 8] = 1;
  CHECK(dice_loss(V(a), V(b)).value()[0] == doctest::Approx(1.0 - 1.0 / 17.0).epsilon(1e-12));

  for (int trial = 0; trial < 100; ++trial) {
    const auto x = gen.tensor({1, 1, 4, 4}, 0, 1), y = gen.tensor({1, 1, 4, 4}, 0, 1);
    CHECK(std::abs(dice_loss(V(x), V(y)).value()[0] - oracle::dice(x, y)) <= 1e-6);
  }
  CHECK(gradient_error([](const std::vector<V>& in) { return dice_loss(in[0], in[1]); },
                       {gen.tensor({1, 1, 3, 3}, 0, 1), gen.tensor({1, 1, 3, 3}, 0, 1)}) < 1e-6);
  CHECK_THROWS_AS(dice_loss(V(T({2})), V(T({3}))), ShapeError);
}

TEST_CASE("boundary loss") {
  Gen gen(3);
  SUBCASE("identical binary masks") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto g = gen.binary({1, 1, 8, 8});
      CHECK(boundary_loss(V(g), V(g)).value()[0] <= 1e-12);
    }
  }
  SUBCASE("constant prediction against constant ground truth is blind to fill") {
    T zero({1, 1, 8, 8}), one({1, 1, 8, 8}, 1.0);
    // zero padding puts a response on the border ring of the constant-one
    // map; away from it both combined fields sit at the floor
    const auto [ox, oy] = sobel_gradients(V(one));
    const auto f1 = gradient_combine(ox, oy).value();
    const auto [zx, zy] = sobel_gradients(V(zero));
    const auto f0 = gradient_combine(zx, zy).value();
    CHECK((f0.array() == 0.01).all());
    for (Index y = 1; y < 7; ++y)
      for (Index x = 1; x < 7; ++x) CHECK(f1.at(0, 0, y, x) == 0.01);
    T inner0({1, 1, 6, 6}), inner1({1, 1, 6, 6});
    for (Index y = 0; y < 6; ++y)
      for (Index x = 0; x < 6; ++x) inner0.at(0, 0, y, x) = f0.at(0, 0, y + 1, x + 1), inner1.at(0, 0, y, x) = f1.at(0, 0, y + 1, x + 1);
    CHECK(dice_loss(V(inner0), V(inner1)).value()[0] <= 1.0 / (2 * inner0.array().sum() + 1.0) + 1e-12);
  }
  SUBCASE("matches the brute-force recomputation") {
    for (int trial = 0; trial < 100; ++trial) {
      const auto p = gen.tensor({2, 1, 8, 8}, 0, 1);
      const auto g = gen.binary({2, 1, 8, 8});
      CHECK(std::abs(boundary_loss(V(p), V(g)).value()[0] - oracle::boundary(p, g)) <= 1e-6);
    }
  }
  SUBCASE("adding a constant leaves the gradient field unchanged where the ring is fixed") {
    for (int trial = 0; trial < 50; ++trial) {
      auto p = gen.tensor({1, 1, 10, 10}, 0.2, 0.6);
      for (Index y = 0; y < 10; ++y)
        for (Index x = 0; x < 10; ++x)
          if (y < 2 || y > 7 || x < 2 || x > 7) p.at(0, 0, y, x) = 0.0;
      auto q = p;
      const double c = gen.uniform(-0.2, 0.2);
      for (Index y = 2; y < 8; ++y)
        for (Index x = 2; x < 8; ++x) q.at(0, 0, y, x) += c;
      // every 3x3 window centred in the 4x4 core is shifted uniformly
      const auto [px, py] = sobel_gradients(V(p));
      const auto [qx, qy] = sobel_gradients(V(q));
      const auto fp = gradient_combine(px, py).value(), fq = gradient_combine(qx, qy).value();
      for (Index y = 3; y < 7; ++y)
        for (Index x = 3; x < 7; ++x) CHECK(std::abs(fp.at(0, 0, y, x) - fq.at(0, 0, y, x)) <= 1e-12);
    }
    // at the loss level: a fixed ring and a constant shift of everything else
    for (int trial = 0; trial < 50; ++trial) {
      const auto g = gen.binary({1, 1, 8, 8});
      auto p = gen.tensor({1, 1, 8, 8}, 0.3, 0.7);
      auto q = p;
      const double c = gen.uniform(-0.2, 0.2);
      for (Index i = 0; i < q.size(); ++i) q[i] += c;
      const auto core = [](const T& m) {
        const auto [gx, gy] = sobel_gradients(V(m));
        const auto f = gradient_combine(gx, gy).value();
        T out({1, 1, 6, 6});
        for (Index y = 0; y < 6; ++y)
          for (Index x = 0; x < 6; ++x) out.at(0, 0, y, x) = f.at(0, 0, y + 1, x + 1);
        return out;
      };
      CHECK(std::abs(dice_loss(V(core(p)), V(core(g))).value()[0] - dice_loss(V(core(q)), V(core(g))).value()[0]) <= 1e-12);
    }
  }
  SUBCASE("finite, and below zero only when the Sobel fields exceed one") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = gen.tensor({1, 1, 6, 6}, 0, 1);
      const auto g = gen.binary({1, 1, 6, 6});
      const double v = boundary_loss(V(p), V(g)).value()[0];
      CHECK(std::isfinite(v));
      // Dice is nonnegative on [0,1] maps; Sobel magnitudes reach 4, so the
      // loss can dip below zero, but never below 1 - 2 max(field)
      CHECK(v >= 1.0 - 2.0 * 4.0);
    }
    T soft({1, 1, 6, 6}, 0.02), hard({1, 1, 6, 6});
    for (Index i = 0; i < 36; ++i) soft[i] = 0.02 * double(i % 6);
    CHECK(boundary_loss(V(soft), V(soft)).value()[0] >= 0.0);
    for (Index y = 0; y < 6; ++y)
      for (Index x = 3; x < 6; ++x) hard.at(0, 0, y, x) = 1.0;
    const double self = boundary_loss(V(hard), V(hard)).value()[0];
    CHECK(self < 0.0);
    CHECK(self == doctest::Approx(oracle::boundary(hard, hard)).epsilon(1e-12));
  }
  {
    const auto g = gen.binary({1, 1, 5, 5});
    CHECK(gradient_error([&](const std::vector<V>& in) { return boundary_loss(ops::sigmoid(in[0]), V(g)); },
                         {gen.tensor({1, 1, 5, 5}, -2, 2)}) < 1e-4);
  }
  CHECK_THROWS_AS(boundary_loss(V(T({1, 2, 4, 4})), V(T({1, 2, 4, 4}))), ShapeError);
  CHECK_THROWS_AS(boundary_loss(V(T({1, 1, 4, 4})), V(T({1, 1, 4, 5}))), ShapeError);
}

TEST_CASE("reflection loss reduces to 2-class cross-entropy on the pseudo ground truth") {
  Gen gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = gen.tensor({2, 2, 4, 4}, -3, 3);
    const auto labels = gen.labels(32, 5);
    const std::set<std::int32_t> reflective{1, 3};
    const auto pseudo = extract_reflective_pseudo_gt(labels, reflective);
    const double expected = ce_oracle(logits, pseudo);
    CHECK(std::abs(reflection_loss(V(logits), labels_of(2, 4, 4, labels), reflective).value()[0] - expected) <= 1e-6);
  }
  SUBCASE("upsampled to the label resolution") {
    const auto logits = gen.tensor({1, 2, 4, 4});
    const auto labels = gen.labels(64, 3);
    const auto up = ops::resize_bilinear(V(logits), 8, 8).value();
    CHECK(std::abs(reflection_loss(V(logits), labels_of(1, 8, 8, labels), {2}).value()[0] -
                   ce_oracle(up, extract_reflective_pseudo_gt(labels, {2}))) <= 1e-6);
  }
  SUBCASE("degenerate supervision") {
    T logits({1, 2, 3, 3});
    for (Index i = 0; i < 9; ++i) logits[i] = 30.0;  // channel 0 everywhere
    CHECK(reflection_loss(V(logits), labels_of(1, 3, 3, gen.labels(9, 4)), {}).value()[0] < 1e-9);
  }
  CHECK_THROWS_AS(reflection_loss(V(T({1, 3, 2, 2})), labels_of(1, 2, 2, {0, 0, 0, 0}), {1}), ShapeError);
}

TEST_CASE("total loss") {
  const auto b = total_loss(2.0, 0.5, 0.3, LossWeights{});
  CHECK(b.total == doctest::Approx(2.08).epsilon(1e-15));
  CHECK(b.semantic == 2.0);
  CHECK(b.boundary == 0.5);
  CHECK(b.reflection == 0.3);
  CHECK(total_loss(2.0, 0.5, 0.3, {1, 0, 0}).total == 2.0);
  CHECK(total_loss(2.0, 0.5, 0.3, {0, 0, 0}).total == 0.0);
  CHECK_THROWS_AS(total_loss(1, 1, 1, {1, -0.1, 0}), ConfigError);
  CHECK_THROWS_AS(LossWeights({std::nan(""), 0, 0}).validate(), ConfigError);

  Gen gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = gen.uniform(0, 3), bd = gen.uniform(0, 1), r = gen.uniform(0, 1);
    const LossWeights w1{gen.uniform(0, 2), gen.uniform(0, 2), gen.uniform(0, 2)};
    const LossWeights w2{gen.uniform(0, 2), gen.uniform(0, 2), gen.uniform(0, 2)};
    const double k = gen.uniform(0, 3);
    const LossWeights mix{w1.alpha + k * w2.alpha, w1.beta + k * w2.beta, w1.gamma + k * w2.gamma};
    CHECK(total_loss(s, bd, r, mix).total ==
          doctest::Approx(total_loss(s, bd, r, w1).total + k * total_loss(s, bd, r, w2).total).epsilon(1e-12));
  }
}

TEST_CASE("foreground mask marks every non-background pixel") {
  const auto m = foreground_mask<double>(labels_of(1, 2, 2, {0, 3, 1, 0}));
  CHECK(m.shape() == Shape{1, 1, 2, 2});
  CHECK(m[0] == 0);
  CHECK(m[1] == 1);
  CHECK(m[2] == 1);
  CHECK(m[3] == 0);
}
