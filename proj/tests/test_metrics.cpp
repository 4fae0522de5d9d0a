#include "support.hpp"
#include "oracles.hpp"

#include <algorithm>

#include "transcues/errors.hpp"
#include "transcues/metrics.hpp"

using namespace tc::metrics;
using Eigen::Index;

namespace {

Map random_prob(Gen& gen, Index h, Index w) {
  Map m(h, w);
  for (Index i = 0; i < m.size(); ++i) m(i) = gen.uniform();
  return m;
}

Map random_binary(Gen& gen, Index h, Index w, double p = 0.5) {
  Map m(h, w);
  for (Index i = 0; i < m.size(); ++i) m(i) = gen.coin(p) ? 1.0 : 0.0;
  return m;
}

LabelMap random_labels(Gen& gen, Index h, Index w, int n_class) {
  LabelMap m(h, w);
  for (Index i = 0; i < m.size(); ++i) m(i) = gen.integer(0, n_class - 1);
  return m;
}

// Straightforward weighted F-measure: brute-force nearest foreground pixel,
// explicit 7x7 Gaussian, explicit sums.
double fbeta_oracle(const Map& pred, const Map& gt) {
  const Index h = gt.rows(), w = gt.cols();
  Map e(h, w), et(h, w), dist(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) e(y, x) = std::abs(pred(y, x) - (gt(y, x) > 0.5 ? 1.0 : 0.0));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double best = 1e300;
      double err = 0;
      for (Index yy = 0; yy < h; ++yy)
        for (Index xx = 0; xx < w; ++xx) {
          if (gt(yy, xx) <= 0.5) continue;
          const double d = double((y - yy) * (y - yy) + (x - xx) * (x - xx));
          if (d < best) best = d, err = e(yy, xx);
        }
      dist(y, x) = std::sqrt(best);
      et(y, x) = gt(y, x) > 0.5 ? e(y, x) : err;
    }
  double k[7][7], ks = 0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) ks += k[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / 50.0);
  double tpw = 0, fpw = 0, efg = 0, nfg = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double ea = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          const Index yy = y + i - 3, xx = x + j - 3;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) ea += k[i][j] / ks * et(yy, xx);
        }
      if (gt(y, x) > 0.5) {
        efg += std::min(e(y, x), ea);
        ++nfg;
      } else {
        fpw += e(y, x) * (2.0 - std::exp(std::log(0.5) / 5.0 * dist(y, x)));
      }
    }
  tpw = nfg - efg;
  const double eps = 2.220446049250313e-16;
  const double r = 1.0 - efg / nfg, p = tpw / (eps + tpw + fpw);
  return 1.3 * r * p / (eps + r + 0.3 * p);
}

Map blob(Gen& gen, Index h, Index w) {
  Map g = Map::Zero(h, w);
  const Index y0 = gen.integer(0, int(h) - 3), x0 = gen.integer(0, int(w) - 3);
  const Index y1 = gen.integer(int(y0) + 1, int(h) - 1), x1 = gen.integer(int(x0) + 1, int(w) - 1);
  g.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) = 1.0;
  return g;
}

}  // namespace

TEST_CASE("binary IoU") {
  Gen gen(1);
  Map half = Map::Zero(4, 4);
  half.leftCols(2) = 1;
  CHECK(binary_iou(Map::Ones(4, 4), half) == 0.5);
  CHECK(binary_iou(half, half) == 1.0);
  CHECK(binary_iou(Map::Zero(3, 3), Map::Zero(3, 3)) == 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_prob(gen, 8, 8);
    const auto g = random_binary(gen, 8, 8);
    CHECK(std::abs(binary_iou(p, g) - oracle::iou(p, g)) <= 1e-9);
  }
  CHECK_THROWS_AS(binary_iou(Map::Zero(3, 3), Map::Zero(3, 4)), tc::ShapeError);

  // not symmetric under complementing both masks
  Map p = Map::Zero(2, 2), g = Map::Zero(2, 2);
  p(0, 0) = 1;
  g(0, 0) = g(0, 1) = 1;
  CHECK(binary_iou(p, g) == 0.5);
  CHECK(binary_iou(1.0 - p, 1.0 - g) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("mean absolute error") {
  Gen gen(2);
  CHECK(mae(Map::Constant(3, 5, 0.5), Map::Ones(3, 5)) == 0.5);
  const auto a = random_prob(gen, 6, 6);
  CHECK(mae(a, a) == 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_prob(gen, 8, 8);
    const auto g = random_binary(gen, 8, 8);
    CHECK(std::abs(mae(p, g) - oracle::mae(p, g)) <= 1e-9);
    CHECK(std::abs(mae(1.0 - p, 1.0 - g) - mae(p, g)) <= 1e-12);
  }
}

TEST_CASE("balanced error rate") {
  Gen gen(3);
  Map half = Map::Zero(4, 4);
  half.topRows(2) = 1;
  CHECK(*ber(Map::Ones(4, 4), half) == 50.0);
  CHECK(*ber(half, half) == 0.0);
  CHECK_FALSE(ber(half, Map::Ones(4, 4)).has_value());
  CHECK_FALSE(ber(half, Map::Zero(4, 4)).has_value());
  int defined = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto p = random_binary(gen, 8, 8);
    const auto g = random_binary(gen, 8, 8, gen.uniform(0.05, 0.95));
    const auto v = ber(p, g);
    if (!v) continue;
    ++defined;
    CHECK(std::abs(*v - oracle::ber(p, g)) <= 1e-9);
    CHECK(*v >= 0.0);
    CHECK(*v <= 100.0);
    CHECK(std::abs(*ber(1.0 - p, 1.0 - g) - *v) <= 1e-9);
  }
  CHECK(defined >= 100);
}

TEST_CASE("multi-class mIoU") {
  LabelMap p(2, 2), g(2, 2);
  p << 0, 1, 1, 1;
  g << 0, 1, 0, 1;
  const auto r = multiclass_miou(p, g, 3);
  CHECK(*r.per_class_iou[0] == 0.5);
  CHECK(*r.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_FALSE(r.per_class_iou[2].has_value());
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  CHECK(multiclass_miou(g, g, 3).miou == 1.0);

  Gen gen(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_labels(gen, 8, 8, 4), b = random_labels(gen, 8, 8, 4);
    const double m = multiclass_miou(a, b, 4).miou;
    CHECK(std::abs(m - oracle::miou(a, b, 4)) <= 1e-9);
    CHECK(std::abs(m - multiclass_miou(b, a, 4).miou) <= 1e-12);
  }

  LabelMap bad = g;
  bad(1, 1) = 3;
  CHECK_THROWS_AS(multiclass_miou(bad, g, 3), tc::DataError);
  CHECK_THROWS_AS(multiclass_miou(g, bad, 3), tc::DataError);
}

TEST_CASE("metrics ignore a shared pixel permutation") {
  Gen gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_prob(gen, 6, 6);
    const auto g = random_binary(gen, 6, 6);
    const auto lp = random_labels(gen, 6, 6, 3), lg = random_labels(gen, 6, 6, 3);
    std::vector<Index> perm(36);
    for (Index i = 0; i < 36; ++i) perm[std::size_t(i)] = i;
    std::shuffle(perm.begin(), perm.end(), gen.rng);
    Map pp(6, 6), gg(6, 6);
    LabelMap lpp(6, 6), lgg(6, 6);
    for (Index i = 0; i < 36; ++i) {
      pp(i) = p(perm[std::size_t(i)]);
      gg(i) = g(perm[std::size_t(i)]);
      lpp(i) = lp(perm[std::size_t(i)]);
      lgg(i) = lg(perm[std::size_t(i)]);
    }
    CHECK(binary_iou(pp, gg) == binary_iou(p, g));
    CHECK(std::abs(mae(pp, gg) - mae(p, g)) <= 1e-12);
    if (ber(p, g)) CHECK(*ber(pp, gg) == *ber(p, g));
    CHECK(multiclass_miou(lpp, lgg, 3).miou == multiclass_miou(lp, lg, 3).miou);
  }
}

TEST_CASE("distance transform agrees with brute force") {
  Gen gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Index h = gen.integer(1, 12), w = gen.integer(1, 12);
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> sites(h, w);
    for (Index i = 0; i < sites.size(); ++i) sites(i) = gen.coin(0.15);
    sites(gen.integer(0, int(h) - 1), gen.integer(0, int(w) - 1)) = true;
    const auto dt = distance_transform(sites);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double best = 1e300;
        for (Index yy = 0; yy < h; ++yy)
          for (Index xx = 0; xx < w; ++xx)
            if (sites(yy, xx)) best = std::min(best, double((y - yy) * (y - yy) + (x - xx) * (x - xx)));
        CHECK(dt.squared_distance(y, x) == best);
        const Index n = dt.nearest(y, x);
        REQUIRE(sites(n));
        const Index ny = n % h, nx = n / h;
        CHECK(double((y - ny) * (y - ny) + (x - nx) * (x - nx)) == best);
      }
  }
  CHECK_THROWS_AS(distance_transform(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(3, 3, false)),
                  tc::DataError);
}

TEST_CASE("weighted F-measure") {
  Gen gen(7);
  SUBCASE("trivial cases") {
    const auto g = blob(gen, 16, 16);
    CHECK(*weighted_fbeta(g, g) == doctest::Approx(1.0).epsilon(1e-12));
    // zero padding in the error smoothing forgives part of an object that
    // touches the image border, so the empty prediction uses an inner object
    Map inner = Map::Zero(16, 16);
    inner.block(4, 5, 6, 7) = 1;
    CHECK(*weighted_fbeta(Map::Zero(16, 16), inner) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(*weighted_fbeta(Map::Zero(16, 16), g) == doctest::Approx(fbeta_oracle(Map::Zero(16, 16), g)).epsilon(1e-12));
    CHECK_FALSE(weighted_fbeta(g, Map::Zero(16, 16)).has_value());
  }
  SUBCASE("matches the straightforward implementation") {
    // uniform foreground error makes the nearest-pixel error independent of
    // how distance ties are broken
    for (int trial = 0; trial < 60; ++trial) {
      const auto g = blob(gen, 12, 14);
      Map p = random_prob(gen, 12, 14);
      const double a = gen.uniform();
      for (Index i = 0; i < g.size(); ++i)
        if (g(i) > 0.5) p(i) = a;
      const double got = *weighted_fbeta(p, g);
      CHECK(std::abs(got - fbeta_oracle(p, g)) <= 1e-9);
      CHECK(got >= 0.0);
      CHECK(got <= 1.0 + 1e-12);
    }
    // a single foreground site cannot tie
    for (int trial = 0; trial < 60; ++trial) {
      Map g = Map::Zero(10, 10);
      g(gen.integer(0, 9), gen.integer(0, 9)) = 1;
      const auto p = random_prob(gen, 10, 10);
      CHECK(std::abs(*weighted_fbeta(p, g) - fbeta_oracle(p, g)) <= 1e-9);
    }
  }
  SUBCASE("a false positive next to the object costs less than a distant one") {
    Map g = Map::Zero(16, 16);
    g.block(4, 4, 5, 5) = 1;
    Map near = g, far = g;
    near(6, 9) = 1;
    far(6, 15) = 1;
    const double fn = *weighted_fbeta(near, g), ff = *weighted_fbeta(far, g);
    CHECK(fn > ff);
    CHECK(fn == doctest::Approx(fbeta_oracle(near, g)).epsilon(1e-12));
    CHECK(ff == doctest::Approx(fbeta_oracle(far, g)).epsilon(1e-12));
    CHECK(fn < 1.0);
  }
  SUBCASE("translation invariance away from the border") {
    for (int trial = 0; trial < 20; ++trial) {
      Map g = Map::Zero(24, 24), p = Map::Zero(24, 24);
      const Map gb = blob(gen, 6, 6), pb = random_prob(gen, 6, 6);
      g.block(9, 9, 6, 6) = gb;
      p.block(9, 9, 6, 6) = pb;
      const int dy = gen.integer(-3, 3), dx = gen.integer(-3, 3);
      Map g2 = Map::Zero(24, 24), p2 = Map::Zero(24, 24);
      g2.block(9 + dy, 9 + dx, 6, 6) = gb;
      p2.block(9 + dy, 9 + dx, 6, 6) = pb;
      CHECK(std::abs(*weighted_fbeta(p, g) - *weighted_fbeta(p2, g2)) <= 1e-9);
    }
  }
}

TEST_CASE("confusion matrix and evaluation report") {
  ConfusionMatrix cm(3);
  LabelMap p(1, 4), g(1, 4);
  p << 0, 1, 2, 2;
  g << 0, 1, 1, 2;
  cm.add(p, g);
  cm.add(p, g);
  CHECK(cm.count(1, 2) == 2);
  CHECK(cm.count(2, 2) == 2);
  CHECK(cm.pixel_accuracy() == 0.75);
  CHECK_THROWS_AS(ConfusionMatrix(0), tc::ConfigError);

  EvalAccumulator acc(3);
  Map fg(1, 4);
  fg << 0.1, 0.9, 0.8, 0.7;
  acc.add(p, fg, g);
  const auto r = acc.report();
  CHECK(r.images == 1);
  CHECK(r.miou == doctest::Approx((1.0 + 0.5 + 0.5) / 3.0));
  CHECK(r.iou == 1.0);
  CHECK(r.ber == 0.0);
  CHECK(r.mae == doctest::Approx((0.1 + 0.1 + 0.2 + 0.3) / 4.0));
  const auto kv = r.to_key_value();
  for (const char* key : {"miou=", "pixel_acc=", "fbeta_w=", "mae=", "ber=", "iou=", "iou_class0="})
    CHECK(kv.find(key) != std::string::npos);
  CHECK(r.to_table().find("mIoU") != std::string::npos);

  // images without a defined BER or F-measure are skipped in those means
  EvalAccumulator bg_only(2);
  bg_only.add(LabelMap::Zero(2, 2), Map::Zero(2, 2), LabelMap::Zero(2, 2));
  const auto b = bg_only.report();
  CHECK(b.ber_images == 0);
  CHECK(b.fbeta_w_images == 0);
  CHECK(b.miou == 1.0);
}
