#include "support.hpp"
#include "oracles.hpp"

#include "transcues/boundary.hpp"
#include "transcues/errors.hpp"
#include "transcues/losses.hpp"
#include "transcues/optim.hpp"

using namespace tc;
using V = Var<double>;
using T = Tensor<double>;

namespace {

void set_all(ParameterStore<double>& store, const std::string& prefix, double value) {
  for (auto& p : store.parameters())
    if (p.name.starts_with(prefix)) p.var.value_mut().array().setConstant(value);
}

}  // namespace

TEST_CASE("sobel gradients match the loop oracle") {
  Gen gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Index b = gen.integer(1, 3), h = gen.integer(3, 16), w = gen.integer(3, 16);
    const auto m = gen.tensor({b, 1, h, w}, 0, 1);
    const auto [gx, gy] = sobel_gradients(V(m));
    const auto [ox, oy] = oracle::sobel(m);
    CHECK(max_abs_diff(gx.value(), ox) <= 1e-6);
    CHECK(max_abs_diff(gy.value(), oy) <= 1e-6);
  }
}

TEST_CASE("sobel on a constant map and on a vertical step") {
  T constant({1, 1, 6, 6}, 0.7);
  const auto [cx, cy] = sobel_gradients(V(constant));
  for (Index y = 1; y < 5; ++y)
    for (Index x = 1; x < 5; ++x) {
      CHECK(cx.value().at(0, 0, y, x) == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(cy.value().at(0, 0, y, x) == doctest::Approx(0.0).epsilon(1e-12));
    }

  T step({1, 1, 8, 8});
  for (Index y = 0; y < 8; ++y)
    for (Index x = 4; x < 8; ++x) step.at(0, 0, y, x) = 1.0;
  const auto [sx, sy] = sobel_gradients(V(step));
  for (Index y = 1; y < 7; ++y) {
    for (Index x = 1; x < 7; ++x) {
      CHECK(sx.value().at(0, 0, y, x) == ((x == 3 || x == 4) ? 4.0 : 0.0));
      CHECK(sy.value().at(0, 0, y, x) == 0.0);
    }
  }
}

TEST_CASE("gradient_combine floors the mean at tau") {
  const auto zero = gradient_combine(V(T({2, 3})), V(T({2, 3}))).value();
  CHECK((zero.array() == 0.01).all());
  CHECK(gradient_combine(V(T({1}, 0.5)), V(T({1}, 0.3)), 0.01).value()[0] == doctest::Approx(0.4));

  Gen gen(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = gen.uniform(0, 0.05), b = gen.uniform(0, 0.05), d = gen.uniform(0, 0.05);
    const auto f = [](double x, double y) { return gradient_combine(V(T({1}, x)), V(T({1}, y))).value()[0]; };
    CHECK(f(a, b) >= 0.01);
    CHECK(f(a, b) == f(b, a));
    CHECK(f(a + d, b) >= f(a, b));
  }
}

TEST_CASE("BFE enhancement follows (fuse + x) * x") {
  Gen gen(3);
  ParameterStore<double> store(4);
  BoundaryEnhancement<double> bfe(Scope<double>(store, "bfe"), 8);

  SUBCASE("zero input annihilates for any parameters") {
    for (int draw = 0; draw < 20; ++draw) {
      for (auto& p : store.parameters()) p.var.value_mut() = gen.tensor(p.var.shape());
      const auto out = bfe(V(T({2, 8, 6, 6})));
      CHECK((out.enhanced.value().array() == 0.0).all());
    }
  }
  SUBCASE("a zero fusion map leaves x squared") {
    set_all(store, "bfe.fuse", 0.0);
    const auto x = gen.tensor({1, 8, 5, 5});
    const auto out = bfe(V(x));
    CHECK(max_abs_diff(out.enhanced.value(), T(x.shape(), x.array() * x.array())) <= 1e-15);
  }
  SUBCASE("recomputed from the captured fusion output") {
    const auto x = gen.tensor({2, 8, 6, 7});
    const auto out = bfe(V(x));
    const auto& f = out.fused.value();
    CHECK(max_abs_diff(out.enhanced.value(), T(x.shape(), (f.array() + x.array()) * x.array())) <= 1e-6);
    CHECK(out.boundary_logits.shape() == Shape{2, 1, 6, 7});
    CHECK(out.enhanced.shape() == x.shape());
  }
  SUBCASE("wrong channel count") { CHECK_THROWS_AS(bfe(V(T({1, 4, 5, 5}))), ShapeError); }
}

TEST_CASE("one boundary-loss step updates the boundary head") {
  Gen gen(5);
  ParameterStore<double> store(6);
  BoundaryEnhancement<double> bfe(Scope<double>(store, "bfe"), 4);
  const auto x = gen.tensor({1, 4, 8, 8});
  T gt({1, 1, 8, 8});
  for (Index y = 2; y < 6; ++y)
    for (Index xx = 2; xx < 6; ++xx) gt.at(0, 0, y, xx) = 1.0;
  std::vector<T> before;
  for (const auto& p : store.parameters()) before.push_back(p.var.value());
  const auto out = bfe(V(x));
  boundary_loss(ops::sigmoid(out.boundary_logits), V(gt)).backward();
  OptimizerConfig oc;
  oc.lr = 1e-2;
  AdamW<double>(oc).step(store.parameters());
  bool changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (store.parameters()[i].name.starts_with("bfe.boundary_head"))
      changed = changed || max_abs_diff(before[i], store.parameters()[i].var.value()) > 0;
  }
  CHECK(changed);
}

TEST_CASE("BFE gradients agree with central differences") {
  Gen gen(7);
  ParameterStore<double> store(8);
  BoundaryEnhancement<double> bfe(Scope<double>(store), 3);
  const auto x = gen.tensor({2, 3, 5, 5});
  CHECK(gradient_error([&](const std::vector<V>& in) { return bfe(in[0]).enhanced; }, {x}, 7, 1e-5) < 1e-4);
  CHECK(gradient_error([&](const std::vector<V>& in) { return bfe(in[0]).boundary_logits; }, {x}, 7, 1e-5) < 1e-4);
}

TEST_CASE("the corrupted Sobel backward fixture really changes the gradient") {
  Gen gen(9);
  const auto m = gen.tensor({1, 1, 6, 6}, 0, 1);
  const auto weights = V(gen.tensor({1, 1, 6, 6}));
  auto grad = [&] {
    V x(m, true);
    const auto [gx, gy] = sobel_gradients(x);
    ops::sum(ops::mul(ops::add(gx, gy), weights)).backward();
    return x.grad();
  };
  const auto clean = grad();
  T corrupt;
  {
    testing::ScopedSobelBackwardCorruption guard;
    corrupt = grad();
  }
  CHECK(max_abs_diff(clean, corrupt) > 1e-3);
  CHECK(max_abs_diff(clean, grad()) == 0.0);
}
