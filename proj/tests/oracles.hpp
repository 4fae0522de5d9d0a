#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// tests. Written from the formulas with plain loops, independent of the
// library's vectorised code.

#include <cmath>
#include <utility>

#include "transcues/metrics.hpp"
#include "transcues/tensor.hpp"

namespace oracle {

using T = transcues::Tensor<double>;
using transcues::Index;
using transcues::metrics::LabelMap;
using transcues::metrics::Map;

// |correlation| with the 3x3 Sobel kernels, zero padding.
inline std::pair<T, T> sobel(const T& m) {
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  T gx(m.shape()), gy(m.shape());
  const Index h = m.dim(2), w = m.dim(3);
  for (Index n = 0; n < m.dim(0); ++n)
    for (Index c = 0; c < m.dim(1); ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          double sx = 0, sy = 0;
          for (int i = -1; i <= 1; ++i)
            for (int j = -1; j <= 1; ++j) {
              if (y + i < 0 || y + i >= h || x + j < 0 || x + j >= w) continue;
              const double v = m.at(n, c, y + i, x + j);
              sx += kx[i + 1][j + 1] * v;
              sy += kx[j + 1][i + 1] * v;  // transpose
            }
          gx.at(n, c, y, x) = std::abs(sx);
          gy.at(n, c, y, x) = std::abs(sy);
        }
  return {gx, gy};
}

inline double dice(const T& p, const T& t, double eps = 1.0) {
  double inter = 0, sp = 0, st = 0;
  for (Index i = 0; i < p.size(); ++i) {
    inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  return 1.0 - (2 * inter + eps) / (sp + st + eps);
}

// Loop Sobel, explicit max(mean, 0.01) combine, explicit Dice.
inline double boundary(const T& pred, const T& gt) {
  auto field = [](const T& m) {
    const auto [gx, gy] = sobel(m);
    T out(m.shape());
    for (Index i = 0; i < m.size(); ++i) out[i] = std::max(0.5 * (gx[i] + gy[i]), 0.01);
    return out;
  };
  return dice(field(pred), field(gt));
}

inline double iou(const Map& p, const Map& g) {
  int inter = 0, uni = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) {
      const bool a = p(y, x) >= 0.5, b = g(y, x) > 0.5;
      inter += a && b;
      uni += a || b;
    }
  return uni ? double(inter) / uni : 1.0;
}

inline double mae(const Map& p, const Map& g) {
  double s = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) s += std::abs(p(y, x) - g(y, x));
  return s / double(p.size());
}

inline double ber(const Map& p, const Map& g) {
  double tp = 0, tn = 0, np = 0, nn = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) {
      const bool a = p(y, x) >= 0.5, b = g(y, x) > 0.5;
      if (b) {
        ++np;
        tp += a;
      } else {
        ++nn;
        tn += !a;
      }
    }
  return 100.0 * (1.0 - 0.5 * (tp / np + tn / nn));
}

inline double miou(const LabelMap& p, const LabelMap& g, int n_class) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < n_class; ++c) {
    int inter = 0, uni = 0;
    for (Index i = 0; i < p.size(); ++i) {
      inter += p(i) == c && g(i) == c;
      uni += p(i) == c || g(i) == c;
    }
    if (uni) {
      sum += double(inter) / uni;
      ++present;
    }
  }
  return sum / present;
}

}  // namespace oracle
