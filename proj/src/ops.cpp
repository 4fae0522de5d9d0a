#include "transcues/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace transcues::ops {
namespace {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using StridedMap = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using ConstStridedMap = Eigen::Map<const RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using PlaneMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstPlaneMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename S>
void require_rank(const Var<S>& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
  }
}

template <typename S>
bool recording(std::initializer_list<const Var<S>*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const auto* v : inputs) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

// Unfolds (B, C, H, W) into a row-major (C*k*k) x (B*oh*ow) matrix.
template <typename S>
void im2col(const S* x, Index batch, Index channels, Index height, Index width, Index kernel,
            const ConvGeometry& g, Index oh, Index ow, S* col) {
  const Index ncols = batch * oh * ow;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        S* row = col + ((c * kernel + ki) * kernel + kj) * ncols;
        for (Index n = 0; n < batch; ++n) {
          const S* plane = x + (n * channels + c) * height * width;
          for (Index oy = 0; oy < oh; ++oy) {
            S* dst = row + (n * oh + oy) * ow;
            const Index iy = oy * g.stride - g.padding + ki * g.dilation;
            if (iy < 0 || iy >= height) {
              std::fill(dst, dst + ow, S(0));
              continue;
            }
            const S* src = plane + iy * width;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride - g.padding + kj * g.dilation;
              dst[ox] = (ix >= 0 && ix < width) ? src[ix] : S(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into (B, C, H, W).
template <typename S>
void col2im(const S* col, Index batch, Index channels, Index height, Index width, Index kernel,
            const ConvGeometry& g, Index oh, Index ow, S* x) {
  const Index ncols = batch * oh * ow;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        const S* row = col + ((c * kernel + ki) * kernel + kj) * ncols;
        for (Index n = 0; n < batch; ++n) {
          S* plane = x + (n * channels + c) * height * width;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * g.stride - g.padding + ki * g.dilation;
            if (iy < 0 || iy >= height) continue;
            const S* src = row + (n * oh + oy) * ow;
            S* dst = plane + iy * width;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride - g.padding + kj * g.dilation;
              if (ix >= 0 && ix < width) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

// (B, C, P) <-> (C, B*P)
template <typename S>
void batch_to_channel_major(const S* x, Index batch, Index channels, Index plane, S* out) {
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      std::copy_n(x + (n * channels + c) * plane, plane, out + c * batch * plane + n * plane);
    }
  }
}

template <typename S>
void channel_major_to_batch(const S* x, Index batch, Index channels, Index plane, S* out) {
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      std::copy_n(x + c * batch * plane + n * plane, plane, out + (n * channels + c) * plane);
    }
  }
}

struct AxisTable {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

AxisTable bilinear_axis(Index in, Index out) {
  AxisTable t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min(lo + 1, in - 1);
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape(), (a.value().array() + b.value().array()).eval());
  auto na = a.node(), nb = b.node();
  return make_result<S>(std::move(out), {a, b}, [na, nb](const Tensor<S>& g) {
    accumulate<S>(na, g);
    accumulate<S>(nb, g);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape(), (a.value().array() - b.value().array()).eval());
  auto na = a.node(), nb = b.node();
  return make_result<S>(std::move(out), {a, b}, [na, nb](const Tensor<S>& g) {
    accumulate<S>(na, g);
    if (nb->requires_grad) nb->grad_buffer().array() -= g.array();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape(), (a.value().array() * b.value().array()).eval());
  auto na = a.node(), nb = b.node();
  return make_result<S>(std::move(out), {a, b}, [na, nb](const Tensor<S>& g) {
    if (na->requires_grad) na->grad_buffer().array() += g.array() * nb->value.array();
    if (nb->requires_grad) nb->grad_buffer().array() += g.array() * na->value.array();
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), (a.value().array() * factor).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na, factor](const Tensor<S>& g) {
    na->grad_buffer().array() += g.array() * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Tensor<S> out(a.shape(), (a.value().array() + offset).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) { accumulate<S>(na, g); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().array().max(S(0)).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) {
    na->grad_buffer().array() += (na->value.array() > S(0)).select(g.array(), S(0));
  });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const auto& x = a.value().array();
  Tensor<S> out(a.shape(), (S(0.5) * x * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); }))).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na, inv_sqrt2](const Tensor<S>& g) {
    const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * S(M_PI));
    const auto& x = na->value.array();
    const auto cdf = S(0.5) * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); }));
    const auto pdf = inv_sqrt_2pi * (S(-0.5) * x.square()).exp();
    na->grad_buffer().array() += g.array() * (cdf + x * pdf);
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out(a.shape(), (S(1) / (S(1) + (-a.value().array()).exp())).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) {
    const auto s = (S(1) / (S(1) + (-na->value.array()).exp())).eval();
    na->grad_buffer().array() += g.array() * s * (S(1) - s);
  });
}

template <typename S>
Var<S> abs(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().array().abs().eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) {
    const auto& x = na->value.array();
    na->grad_buffer().array() += g.array() * ((x > S(0)).template cast<S>() - (x < S(0)).template cast<S>());
  });
}

template <typename S>
Var<S> clamp_min(const Var<S>& a, S floor) {
  Tensor<S> out(a.shape(), a.value().array().max(floor).eval());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na, floor](const Tensor<S>& g) {
    na->grad_buffer().array() += (na->value.array() > floor).select(g.array(), S(0));
  });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out(Shape{1}, a.value().array().sum());
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) {
    na->grad_buffer().array() += g[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const S inv = S(1) / static_cast<S>(a.size());
  Tensor<S> out(Shape{1}, a.value().array().sum() * inv);
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na, inv](const Tensor<S>& g) {
    na->grad_buffer().array() += g[0] * inv;
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  auto na = a.node();
  return make_result<S>(std::move(out), {a}, [na](const Tensor<S>& g) {
    na->grad_buffer().array() += g.array();
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const Index in = weight.dim(1), out_features = weight.dim(0);
  if (x.dim(-1) != in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const Index rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor<S> out(out_shape);
  auto y = out.matrix(rows, out_features);
  y.noalias() = x.value().matrix(rows, in) * weight.value().matrix(out_features, in).transpose();
  if (bias.defined()) y.rowwise() += bias.value().matrix(1, out_features).row(0);
  auto nx = x.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(std::move(out), std::move(inputs), [nx, nw, nb, rows, in, out_features](const Tensor<S>& g) {
    auto gy = g.matrix(rows, out_features);
    if (nx->requires_grad) {
      nx->grad_buffer().matrix(rows, in).noalias() += gy * nw->value.matrix(out_features, in);
    }
    if (nw->requires_grad) {
      nw->grad_buffer().matrix(out_features, in).noalias() += gy.transpose() * nx->value.matrix(rows, in);
    }
    if (nb && nb->requires_grad) nb->grad_buffer().matrix(1, out_features) += gy.colwise().sum();
  });
}

template <typename S>
Var<S> nchw_to_tokens(const Var<S>& x) {
  require_rank(x, 4, "nchw_to_tokens");
  const Index b = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  Tensor<S> out(Shape{b, p, c});
  for (Index n = 0; n < b; ++n) {
    out.matrix(b * p, c).middleRows(n * p, p) =
        x.value().matrix(b * c, p).middleRows(n * c, c).transpose();
  }
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, b, c, p](const Tensor<S>& g) {
    auto& gx = nx->grad_buffer();
    for (Index n = 0; n < b; ++n) {
      gx.matrix(b * c, p).middleRows(n * c, c) += g.matrix(b * p, c).middleRows(n * p, p).transpose();
    }
  });
}

template <typename S>
Var<S> tokens_to_nchw(const Var<S>& x, Index height, Index width) {
  require_rank(x, 3, "tokens_to_nchw");
  const Index b = x.dim(0), p = x.dim(1), c = x.dim(2);
  if (p != height * width) {
    throw ShapeError("tokens_to_nchw: " + std::to_string(p) + " tokens do not form a " + std::to_string(height) +
                     "x" + std::to_string(width) + " grid");
  }
  Tensor<S> out(Shape{b, c, height, width});
  for (Index n = 0; n < b; ++n) {
    out.matrix(b * c, p).middleRows(n * c, c) = x.value().matrix(b * p, c).middleRows(n * p, p).transpose();
  }
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, b, c, p](const Tensor<S>& g) {
    auto& gx = nx->grad_buffer();
    for (Index n = 0; n < b; ++n) {
      gx.matrix(b * p, c).middleRows(n * p, p) += g.matrix(b * c, p).middleRows(n * c, c).transpose();
    }
  });
}

template <typename S>
Var<S> add_broadcast_batch(const Var<S>& tokens, const Var<S>& table) {
  const Index b = tokens.dim(0), per = tokens.size() / b;
  if (table.size() != per || table.dim(0) != 1) {
    throw ShapeError("add_broadcast_batch: table " + to_string(table.shape()) + " vs tokens " +
                     to_string(tokens.shape()));
  }
  Tensor<S> out = tokens.value();
  out.matrix(b, per).rowwise() += table.value().matrix(1, per).row(0);
  auto nt = tokens.node(), np = table.node();
  return make_result<S>(std::move(out), {tokens, table}, [nt, np, b, per](const Tensor<S>& g) {
    accumulate<S>(nt, g);
    if (np->requires_grad) np->grad_buffer().matrix(1, per) += g.matrix(b, per).colwise().sum();
  });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, ConvGeometry geometry) {
  require_rank(x, 4, "conv2d");
  const Index b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs weight " + to_string(weight.shape()));
  }
  const Index oh = conv_output_size(h, k, geometry), ow = conv_output_size(w, k, geometry);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input " + to_string(x.shape()) + " too small for kernel");
  const Index kk = cin * k * k, plane = oh * ow, ncols = b * plane;

  RowMatrix<S> col(kk, ncols);
  im2col(x.value().data(), b, cin, h, w, k, geometry, oh, ow, col.data());
  RowMatrix<S> y = weight.value().matrix(cout, kk) * col;
  if (bias.defined()) y.colwise() += bias.value().matrix(cout, 1).col(0);
  Tensor<S> out(Shape{b, cout, oh, ow});
  channel_major_to_batch(y.data(), b, cout, plane, out.data());

  const bool keep = recording<S>({&x, &weight, &bias});
  if (!keep) return Var<S>(std::move(out));
  auto nx = x.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(
      std::move(out), std::move(inputs),
      [nx, nw, nb, b, cin, h, w, cout, k, geometry, oh, ow, kk, plane, ncols](const Tensor<S>& g) {
        RowMatrix<S> gy(cout, ncols);
        batch_to_channel_major(g.data(), b, cout, plane, gy.data());
        if (nb && nb->requires_grad) nb->grad_buffer().matrix(cout, 1) += gy.rowwise().sum();
        if (nw->requires_grad) {
          RowMatrix<S> col(kk, ncols);
          im2col(nx->value.data(), b, cin, h, w, k, geometry, oh, ow, col.data());
          nw->grad_buffer().matrix(cout, kk).noalias() += gy * col.transpose();
        }
        if (nx->requires_grad) {
          RowMatrix<S> gcol = nw->value.matrix(cout, kk).transpose() * gy;
          col2im(gcol.data(), b, cin, h, w, k, geometry, oh, ow, nx->grad_buffer().data());
        }
      });
}

template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, ConvGeometry geometry) {
  require_rank(x, 4, "conv_transpose2d");
  const Index b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin) {
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(cin) + " vs weight " +
                     to_string(weight.shape()));
  }
  const Index oh = (h - 1) * geometry.stride - 2 * geometry.padding + geometry.dilation * (k - 1) + 1;
  const Index ow = (w - 1) * geometry.stride - 2 * geometry.padding + geometry.dilation * (k - 1) + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output for " + to_string(x.shape()));
  const Index kk = cout * k * k, plane = h * w, ncols = b * plane;

  RowMatrix<S> xs(cin, ncols);
  batch_to_channel_major(x.value().data(), b, cin, plane, xs.data());
  RowMatrix<S> col = weight.value().matrix(cin, kk).transpose() * xs;
  Tensor<S> out(Shape{b, cout, oh, ow});
  col2im(col.data(), b, cout, oh, ow, k, geometry, h, w, out.data());
  if (bias.defined()) {
    for (Index n = 0; n < b; ++n) {
      out.matrix(b * cout, oh * ow).middleRows(n * cout, cout).colwise() += bias.value().matrix(cout, 1).col(0);
    }
  }

  const bool keep = recording<S>({&x, &weight, &bias});
  if (!keep) return Var<S>(std::move(out));
  auto nx = x.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(
      std::move(out), std::move(inputs),
      [nx, nw, nb, b, cin, h, w, cout, k, geometry, oh, ow, kk, plane, ncols](const Tensor<S>& g) {
        if (nb && nb->requires_grad) {
          auto gb = nb->grad_buffer().matrix(cout, 1);
          for (Index n = 0; n < b; ++n) gb += g.matrix(b * cout, oh * ow).middleRows(n * cout, cout).rowwise().sum();
        }
        RowMatrix<S> gcol(kk, ncols);
        im2col(g.data(), b, cout, oh, ow, k, geometry, h, w, gcol.data());
        if (nw->requires_grad) {
          RowMatrix<S> xs(cin, ncols);
          batch_to_channel_major(nx->value.data(), b, cin, plane, xs.data());
          nw->grad_buffer().matrix(cin, kk).noalias() += xs * gcol.transpose();
        }
        if (nx->requires_grad) {
          RowMatrix<S> gx = nw->value.matrix(cin, kk) * gcol;
          Tensor<S> tmp(Shape{b, cin, h, w});
          channel_major_to_batch(gx.data(), b, cin, plane, tmp.data());
          nx->grad_buffer().array() += tmp.array();
        }
      });
}

template <typename S>
Var<S> depthwise_conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  require_rank(x, 4, "depthwise_conv2d");
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = weight.dim(2);
  if (weight.dim(0) != c || weight.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) + " for input " + to_string(x.shape()));
  }
  const Index pad = (k - 1) / 2;
  Tensor<S> out(x.shape());
  // Loop over kernel taps and shift whole planes; each tap touches the valid
  // overlap between the output and the shifted input.
  auto for_each_tap = [=](auto&& fn) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Index dy = ki - pad, dx = kj - pad;
        const Index y0 = std::max<Index>(0, -dy), y1 = std::min(h, h - dy);
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min(w, w - dx);
        if (y1 <= y0 || x1 <= x0) continue;
        fn(ki, kj, dy, dx, y0, x0, y1 - y0, x1 - x0);
      }
    }
  };
  for (Index n = 0; n < b; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (n * c + ch) * h * w;
      ConstPlaneMap<S> in(x.value().data() + off, h, w);
      PlaneMap<S> o(out.data() + off, h, w);
      const S* wk = weight.value().data() + ch * k * k;
      if (bias.defined()) o.setConstant(bias.value()[ch]);
      for_each_tap([&](Index ki, Index kj, Index dy, Index dx, Index y0, Index x0, Index hh, Index ww) {
        o.block(y0, x0, hh, ww) += wk[ki * k + kj] * in.block(y0 + dy, x0 + dx, hh, ww);
      });
    }
  }
  const bool keep = recording<S>({&x, &weight, &bias});
  if (!keep) return Var<S>(std::move(out));
  auto nx = x.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(std::move(out), std::move(inputs), [=](const Tensor<S>& g) {
    S* gx = nx->requires_grad ? nx->grad_buffer().data() : nullptr;
    S* gw = nw->requires_grad ? nw->grad_buffer().data() : nullptr;
    S* gb = (nb && nb->requires_grad) ? nb->grad_buffer().data() : nullptr;
    for (Index n = 0; n < b; ++n) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (n * c + ch) * h * w;
        ConstPlaneMap<S> go(g.data() + off, h, w);
        ConstPlaneMap<S> in(nx->value.data() + off, h, w);
        const S* wk = nw->value.data() + ch * k * k;
        if (gb) gb[ch] += go.sum();
        for_each_tap([&](Index ki, Index kj, Index dy, Index dx, Index y0, Index x0, Index hh, Index ww) {
          if (gw) gw[ch * k * k + ki * k + kj] += (go.block(y0, x0, hh, ww) * in.block(y0 + dy, x0 + dx, hh, ww)).sum();
          if (gx) PlaneMap<S>(gx + off, h, w).block(y0 + dy, x0 + dx, hh, ww) += wk[ki * k + kj] * go.block(y0, x0, hh, ww);
        });
      }
    }
  });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  const Index c = x.dim(-1), rows = x.size() / c;
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm: parameter size mismatch");
  using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto xa = x.value().matrix(rows, c).array();
  Eigen::Array<S, Eigen::Dynamic, 1> mu = xa.rowwise().mean();
  Arr centered = xa.colwise() - mu;
  Eigen::Array<S, Eigen::Dynamic, 1> rstd = ((centered.square().rowwise().mean()) + eps).rsqrt();
  Arr xhat = centered.colwise() * rstd;
  Tensor<S> out(x.shape());
  out.matrix(rows, c).array() = (xhat.rowwise() * gamma.value().matrix(1, c).array().row(0)).rowwise() +
                                beta.value().matrix(1, c).array().row(0);
  const bool keep = recording<S>({&x, &gamma, &beta});
  if (!keep) return Var<S>(std::move(out));
  auto nx = x.node(), ng = gamma.node(), nbeta = beta.node();
  return make_result<S>(std::move(out), {x, gamma, beta},
                        [nx, ng, nbeta, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<S>& g) {
                          auto ga = g.matrix(rows, c).array();
                          if (ng->requires_grad) ng->grad_buffer().matrix(1, c).array() += (ga * xhat).colwise().sum();
                          if (nbeta->requires_grad) nbeta->grad_buffer().matrix(1, c).array() += ga.colwise().sum();
                          if (nx->requires_grad) {
                            Arr gxhat = ga.rowwise() * ng->value.matrix(1, c).array().row(0);
                            Eigen::Array<S, Eigen::Dynamic, 1> m1 = gxhat.rowwise().mean();
                            Eigen::Array<S, Eigen::Dynamic, 1> m2 = (gxhat * xhat).rowwise().mean();
                            Arr gx = ((gxhat.colwise() - m1) - xhat.colwise() * m2).colwise() * rstd;
                            nx->grad_buffer().matrix(rows, c).array() += gx;
                          }
                        });
}

template <typename S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Tensor<S>& running_mean,
                    Tensor<S>& running_var, bool training, S momentum, S eps) {
  require_rank(x, 4, "batch_norm2d");
  const Index b = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  const Index count = b * p;
  Eigen::Array<S, Eigen::Dynamic, 1> mu(c), rstd(c);
  auto rows = x.value().matrix(b * c, p).array();
  if (training) {
    for (Index ch = 0; ch < c; ++ch) {
      S s = 0;
      for (Index n = 0; n < b; ++n) s += rows.row(n * c + ch).sum();
      mu[ch] = s / static_cast<S>(count);
      S v = 0;
      for (Index n = 0; n < b; ++n) v += (rows.row(n * c + ch) - mu[ch]).square().sum();
      const S var = v / static_cast<S>(count);
      rstd[ch] = S(1) / std::sqrt(var + eps);
      const S unbiased = count > 1 ? v / static_cast<S>(count - 1) : var;
      running_mean[ch] = (S(1) - momentum) * running_mean[ch] + momentum * mu[ch];
      running_var[ch] = (S(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
  } else {
    for (Index ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean[ch];
      rstd[ch] = S(1) / std::sqrt(running_var[ch] + eps);
    }
  }
  Tensor<S> out(x.shape());
  auto o = out.matrix(b * c, p).array();
  for (Index n = 0; n < b; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      o.row(n * c + ch) = (rows.row(n * c + ch) - mu[ch]) * (rstd[ch] * gamma.value()[ch]) + beta.value()[ch];
    }
  }
  const bool keep = recording<S>({&x, &gamma, &beta});
  if (!keep) return Var<S>(std::move(out));
  auto nx = x.node(), ng = gamma.node(), nbeta = beta.node();
  return make_result<S>(std::move(out), {x, gamma, beta}, [=](const Tensor<S>& g) {
    auto ga = g.matrix(b * c, p).array();
    auto xa = nx->value.matrix(b * c, p).array();
    for (Index ch = 0; ch < c; ++ch) {
      S sum_g = 0, sum_gx = 0;
      for (Index n = 0; n < b; ++n) {
        sum_g += ga.row(n * c + ch).sum();
        sum_gx += (ga.row(n * c + ch) * (xa.row(n * c + ch) - mu[ch])).sum() * rstd[ch];
      }
      if (ng->requires_grad) ng->grad_buffer()[ch] += sum_gx;
      if (nbeta->requires_grad) nbeta->grad_buffer()[ch] += sum_g;
      if (!nx->requires_grad) continue;
      auto gx = nx->grad_buffer().matrix(b * c, p).array();
      const S gscale = ng->value[ch] * rstd[ch];
      if (training) {
        const S inv = S(1) / static_cast<S>(count);
        for (Index n = 0; n < b; ++n) {
          const auto xhat = (xa.row(n * c + ch) - mu[ch]) * rstd[ch];
          gx.row(n * c + ch) += gscale * (ga.row(n * c + ch) - sum_g * inv - xhat * (sum_gx * inv));
        }
      } else {
        for (Index n = 0; n < b; ++n) gx.row(n * c + ch) += gscale * ga.row(n * c + ch);
      }
    }
  });
}

template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, Index heads, Tensor<S>* weights) {
  require_rank(q, 3, "attention");
  const Index b = q.dim(0), n = q.dim(1), c = q.dim(2), m = k.dim(1);
  if (k.shape() != v.shape() || k.dim(0) != b || k.dim(2) != c) {
    throw ShapeError("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " +
                     to_string(v.shape()));
  }
  if (heads <= 0 || c % heads != 0) {
    throw ConfigError("attention: " + std::to_string(c) + " channels are not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const Index d = c / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(d));
  const bool keep = recording<S>({&q, &k, &v});
  Tensor<S> probs(Shape{b, heads, n, m});
  Tensor<S> out(Shape{b, n, c});
  for (Index bi = 0; bi < b; ++bi) {
    for (Index hi = 0; hi < heads; ++hi) {
      ConstStridedMap<S> qm(q.value().data() + bi * n * c + hi * d, n, d, Eigen::OuterStride<>(c));
      ConstStridedMap<S> km(k.value().data() + bi * m * c + hi * d, m, d, Eigen::OuterStride<>(c));
      ConstStridedMap<S> vm(v.value().data() + bi * m * c + hi * d, m, d, Eigen::OuterStride<>(c));
      auto p = probs.matrix(b * heads * n, m).middleRows((bi * heads + hi) * n, n);
      p.noalias() = (qm * km.transpose()) * scale;
      auto pa = p.array();
      pa.colwise() -= pa.rowwise().maxCoeff();
      pa = pa.exp();
      pa.colwise() /= pa.rowwise().sum();
      StridedMap<S> om(out.data() + bi * n * c + hi * d, n, d, Eigen::OuterStride<>(c));
      om.noalias() = p * vm;
    }
  }
  if (weights) *weights = probs;
  if (!keep) return Var<S>(std::move(out));
  auto nq = q.node(), nk = k.node(), nv = v.node();
  return make_result<S>(std::move(out), {q, k, v}, [=, probs = std::move(probs)](const Tensor<S>& g) {
    S* gq = nq->requires_grad ? nq->grad_buffer().data() : nullptr;
    S* gk = nk->requires_grad ? nk->grad_buffer().data() : nullptr;
    S* gv = nv->requires_grad ? nv->grad_buffer().data() : nullptr;
    RowMatrix<S> dp(n, m);
    for (Index bi = 0; bi < b; ++bi) {
      for (Index hi = 0; hi < heads; ++hi) {
        const Index qoff = bi * n * c + hi * d, koff = bi * m * c + hi * d;
        ConstStridedMap<S> go(g.data() + qoff, n, d, Eigen::OuterStride<>(c));
        ConstStridedMap<S> qm(nq->value.data() + qoff, n, d, Eigen::OuterStride<>(c));
        ConstStridedMap<S> km(nk->value.data() + koff, m, d, Eigen::OuterStride<>(c));
        ConstStridedMap<S> vm(nv->value.data() + koff, m, d, Eigen::OuterStride<>(c));
        auto p = probs.matrix(b * heads * n, m).middleRows((bi * heads + hi) * n, n);
        if (gv) StridedMap<S>(gv + koff, m, d, Eigen::OuterStride<>(c)).noalias() += p.transpose() * go;
        dp.noalias() = go * vm.transpose();
        auto dpa = dp.array();
        const Eigen::Array<S, Eigen::Dynamic, 1> row_dot = (dpa * p.array()).rowwise().sum();
        dpa = p.array() * (dpa.colwise() - row_dot);
        if (gq) StridedMap<S>(gq + qoff, n, d, Eigen::OuterStride<>(c)).noalias() += (dp * km) * scale;
        if (gk) StridedMap<S>(gk + koff, m, d, Eigen::OuterStride<>(c)).noalias() += (dp.transpose() * qm) * scale;
      }
    }
  });
}

template <typename S>
Var<S> resize_bilinear(const Var<S>& x, Index height, Index width) {
  require_rank(x, 4, "resize_bilinear");
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == height && w == width) return x;
  if (height <= 0 || width <= 0) throw ShapeError("resize_bilinear: empty target size");
  const AxisTable ty = bilinear_axis(h, height), tx = bilinear_axis(w, width);
  Tensor<S> out(Shape{b, c, height, width});
  const S* in = x.value().data();
  S* o = out.data();
  for (Index plane = 0; plane < b * c; ++plane) {
    const S* src = in + plane * h * w;
    S* dst = o + plane * height * width;
    for (Index y = 0; y < height; ++y) {
      const auto yi = static_cast<std::size_t>(y);
      const S fy = static_cast<S>(ty.frac[yi]);
      const S* r0 = src + ty.lo[yi] * w;
      const S* r1 = src + ty.hi[yi] * w;
      for (Index xx = 0; xx < width; ++xx) {
        const auto xi = static_cast<std::size_t>(xx);
        const S fx = static_cast<S>(tx.frac[xi]);
        const Index x0 = tx.lo[xi], x1 = tx.hi[xi];
        const S top = (S(1) - fx) * r0[x0] + fx * r0[x1];
        const S bot = (S(1) - fx) * r1[x0] + fx * r1[x1];
        dst[y * width + xx] = (S(1) - fy) * top + fy * bot;
      }
    }
  }
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, b, c, h, w, height, width, ty, tx](const Tensor<S>& g) {
    S* gx = nx->grad_buffer().data();
    for (Index plane = 0; plane < b * c; ++plane) {
      const S* src = g.data() + plane * height * width;
      S* dst = gx + plane * h * w;
      for (Index y = 0; y < height; ++y) {
        const auto yi = static_cast<std::size_t>(y);
        const S fy = static_cast<S>(ty.frac[yi]);
        S* r0 = dst + ty.lo[yi] * w;
        S* r1 = dst + ty.hi[yi] * w;
        for (Index xx = 0; xx < width; ++xx) {
          const auto xi = static_cast<std::size_t>(xx);
          const S fx = static_cast<S>(tx.frac[xi]);
          const S gv = src[y * width + xx];
          const Index x0 = tx.lo[xi], x1 = tx.hi[xi];
          r0[x0] += (S(1) - fy) * (S(1) - fx) * gv;
          r0[x1] += (S(1) - fy) * fx * gv;
          r1[x0] += fy * (S(1) - fx) * gv;
          r1[x1] += fy * fx * gv;
        }
      }
    }
  });
}

template <typename S>
Var<S> max_pool2x2(const Var<S>& x) {
  require_rank(x, 4, "max_pool2x2");
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2x2: input " + to_string(x.shape()) + " too small");
  Tensor<S> out(Shape{b, c, oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const S* in = x.value().data();
  for (Index plane = 0; plane < b * c; ++plane) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        Index best = plane * h * w + (2 * y) * w + 2 * xx;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = plane * h * w + (2 * y + dy) * w + 2 * xx + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const Index o = (plane * oh + y) * ow + xx;
        out[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, argmax = std::move(argmax)](const Tensor<S>& g) {
    S* gx = nx->grad_buffer().data();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[static_cast<Index>(i)];
  });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Index b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3), p = h * w;
  Index total = 0;
  for (const auto& part : parts) {
    require_rank(part, 4, "concat_channels");
    if (part.dim(0) != b || part.dim(2) != h || part.dim(3) != w) {
      throw ShapeError("concat_channels: " + to_string(part.shape()) + " vs " + to_string(parts[0].shape()));
    }
    total += part.dim(1);
  }
  Tensor<S> out(Shape{b, total, h, w});
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& part : parts) {
    const Index c = part.dim(1);
    for (Index n = 0; n < b; ++n) {
      std::copy_n(part.value().data() + n * c * p, c * p, out.data() + (n * total + offset) * p);
    }
    offsets.push_back(offset);
    offset += c;
  }
  std::vector<typename Var<S>::NodePtr> nodes;
  for (const auto& part : parts) nodes.push_back(part.node());
  return make_result<S>(std::move(out), parts, [nodes, offsets, b, total, p](const Tensor<S>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      const Index c = nodes[i]->value.dim(1);
      auto& gx = nodes[i]->grad_buffer();
      for (Index n = 0; n < b; ++n) {
        gx.array().segment(n * c * p, c * p) += g.array().segment((n * total + offsets[i]) * p, c * p);
      }
    }
  });
}

template <typename S>
Var<S> slice_channels(const Var<S>& x, Index begin, Index count) {
  require_rank(x, 4, "slice_channels");
  const Index b = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  if (begin < 0 || count <= 0 || begin + count > c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of " + std::to_string(c) + " channels");
  }
  Tensor<S> out(Shape{b, count, x.dim(2), x.dim(3)});
  for (Index n = 0; n < b; ++n) {
    out.array().segment(n * count * p, count * p) = x.value().array().segment((n * c + begin) * p, count * p);
  }
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, b, c, p, begin, count](const Tensor<S>& g) {
    auto& gx = nx->grad_buffer();
    for (Index n = 0; n < b; ++n) {
      gx.array().segment((n * c + begin) * p, count * p) += g.array().segment(n * count * p, count * p);
    }
  });
}

template <typename S>
Var<S> softmax_channels(const Var<S>& x) {
  require_rank(x, 4, "softmax_channels");
  const Index b = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  Tensor<S> out(x.shape());
  for (Index n = 0; n < b; ++n) {
    auto in = x.value().matrix(b * c, p).middleRows(n * c, c).array();
    auto o = out.matrix(b * c, p).middleRows(n * c, c).array();
    o = in.rowwise() - in.colwise().maxCoeff();
    o = o.exp();
    o.rowwise() /= o.colwise().sum();
  }
  Tensor<S> saved = out;
  auto nx = x.node();
  return make_result<S>(std::move(out), {x}, [nx, b, c, p, saved = std::move(saved)](const Tensor<S>& g) {
    auto& gx = nx->grad_buffer();
    for (Index n = 0; n < b; ++n) {
      auto pr = saved.matrix(b * c, p).middleRows(n * c, c).array();
      auto ga = g.matrix(b * c, p).middleRows(n * c, c).array();
      const Eigen::Array<S, 1, Eigen::Dynamic> dot = (ga * pr).colwise().sum();
      gx.matrix(b * c, p).middleRows(n * c, c).array() += pr * (ga.rowwise() - dot);
    }
  });
}

template <typename S>
Var<S> softmax_cross_entropy(const Var<S>& logits, std::span<const std::int32_t> labels) {
  require_rank(logits, 4, "softmax_cross_entropy");
  const Index b = logits.dim(0), c = logits.dim(1), p = logits.dim(2) * logits.dim(3);
  if (static_cast<Index>(labels.size()) != b * p) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  for (const auto label : labels) {
    if (label < 0 || label >= c) {
      throw DataError("class id " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  double total = 0;
  for (Index n = 0; n < b; ++n) {
    auto z = logits.value().matrix(b * c, p).middleRows(n * c, c).array();
    const Eigen::Array<S, 1, Eigen::Dynamic> mx = z.colwise().maxCoeff();
    const Eigen::Array<S, 1, Eigen::Dynamic> lse = (z.rowwise() - mx).exp().colwise().sum().log() + mx;
    for (Index i = 0; i < p; ++i) total += static_cast<double>(lse[i] - z(labels[static_cast<std::size_t>(n * p + i)], i));
  }
  const S inv = S(1) / static_cast<S>(b * p);
  Tensor<S> out(Shape{1}, static_cast<S>(total) * inv);
  auto nz = logits.node();
  std::vector<std::int32_t> kept(labels.begin(), labels.end());
  return make_result<S>(std::move(out), {logits}, [nz, b, c, p, inv, kept = std::move(kept)](const Tensor<S>& g) {
    auto& gz = nz->grad_buffer();
    const S gs = g[0] * inv;
    for (Index n = 0; n < b; ++n) {
      auto z = nz->value.matrix(b * c, p).middleRows(n * c, c).array();
      Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> prob = z.rowwise() - z.colwise().maxCoeff();
      prob = prob.exp();
      prob.rowwise() /= prob.colwise().sum();
      for (Index i = 0; i < p; ++i) prob(kept[static_cast<std::size_t>(n * p + i)], i) -= S(1);
      gz.matrix(b * c, p).middleRows(n * c, c).array() += prob * gs;
    }
  });
}

#define TRANSCUES_INSTANTIATE_OPS(S)                                                                             \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                             \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                             \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                             \
  template Var<S> scale(const Var<S>&, S);                                                                       \
  template Var<S> add_scalar(const Var<S>&, S);                                                                  \
  template Var<S> relu(const Var<S>&);                                                                           \
  template Var<S> gelu(const Var<S>&);                                                                           \
  template Var<S> sigmoid(const Var<S>&);                                                                        \
  template Var<S> abs(const Var<S>&);                                                                            \
  template Var<S> clamp_min(const Var<S>&, S);                                                                   \
  template Var<S> sum(const Var<S>&);                                                                            \
  template Var<S> mean(const Var<S>&);                                                                           \
  template Var<S> reshape(const Var<S>&, Shape);                                                                 \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                           \
  template Var<S> nchw_to_tokens(const Var<S>&);                                                                 \
  template Var<S> tokens_to_nchw(const Var<S>&, Index, Index);                                                   \
  template Var<S> add_broadcast_batch(const Var<S>&, const Var<S>&);                                             \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);                             \
  template Var<S> conv_transpose2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);                   \
  template Var<S> depthwise_conv2d(const Var<S>&, const Var<S>&, const Var<S>&);                                 \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                                    \
  template Var<S> batch_norm2d(const Var<S>&, const Var<S>&, const Var<S>&, Tensor<S>&, Tensor<S>&, bool, S, S); \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&, Index, Tensor<S>*);                     \
  template Var<S> resize_bilinear(const Var<S>&, Index, Index);                                                  \
  template Var<S> max_pool2x2(const Var<S>&);                                                                    \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                                   \
  template Var<S> slice_channels(const Var<S>&, Index, Index);                                                   \
  template Var<S> softmax_channels(const Var<S>&);                                                               \
  template Var<S> softmax_cross_entropy(const Var<S>&, std::span<const std::int32_t>);

TRANSCUES_INSTANTIATE_OPS(float)
TRANSCUES_INSTANTIATE_OPS(double)

}  // namespace transcues::ops
