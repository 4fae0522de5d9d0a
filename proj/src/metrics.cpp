#include "transcues/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "transcues/errors.hpp"

namespace transcues::metrics {
namespace {

using Eigen::Index;
using BoolMap = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

constexpr double kEps = 2.220446049250313e-16;  // MATLAB eps

void check_same_size(const auto& a, const auto& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": prediction is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", ground truth " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

// Lower envelope of parabolas; only finite sites take part.
void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<Index>& arg) {
  const Index n = static_cast<Index>(f.size());
  std::vector<Index> v;
  std::vector<double> z;
  v.reserve(f.size());
  z.reserve(f.size() + 1);
  for (Index q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    while (!v.empty()) {
      const Index p = v.back();
      const double s = ((f[q] + double(q * q)) - (f[p] + double(p * p))) / double(2 * (q - p));
      if (s <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        v.push_back(q);
        z.push_back(s);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.push_back(-std::numeric_limits<double>::infinity());
    }
  }
  d.assign(f.size(), std::numeric_limits<double>::infinity());
  arg.assign(f.size(), -1);
  if (v.empty()) return;
  std::size_t k = 0;
  for (Index q = 0; q < n; ++q) {
    while (k + 1 < v.size() && z[k + 1] < double(q)) ++k;
    const Index p = v[k];
    d[q] = double((q - p) * (q - p)) + f[p];
    arg[q] = p;
  }
}

Map gaussian_kernel(int size, double sigma) {
  Map k(size, size);
  const int r = size / 2;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) k(i, j) = std::exp(-double((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
  }
  return k / k.sum();
}

Map correlate_zero_padded(const Map& x, const Map& k) {
  const Index h = x.rows(), w = x.cols(), r = k.rows() / 2;
  Map out = Map::Zero(h, w);
  for (Index i = 0; i < k.rows(); ++i) {
    for (Index j = 0; j < k.cols(); ++j) {
      const Index di = i - r, dj = j - r;
      const Index y0 = std::max<Index>(0, -di), y1 = std::min<Index>(h, h - di);
      const Index x0 = std::max<Index>(0, -dj), x1 = std::min<Index>(w, w - dj);
      if (y1 <= y0 || x1 <= x0) continue;
      out.block(y0, x0, y1 - y0, x1 - x0) += k(i, j) * x.block(y0 + di, x0 + dj, y1 - y0, x1 - x0);
    }
  }
  return out;
}

}  // namespace

double binary_iou(const Map& pred_prob, const Map& gt, double threshold) {
  check_same_size(pred_prob, gt, "binary_iou");
  const BoolMap p = pred_prob >= threshold;
  const BoolMap g = gt > 0.5;
  const Index inter = (p && g).count();
  const Index uni = (p || g).count();
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double mae(const Map& pred_prob, const Map& gt) {
  check_same_size(pred_prob, gt, "mae");
  if (gt.size() == 0) return 0.0;
  return (pred_prob - gt).abs().mean();
}

std::optional<double> ber(const Map& pred, const Map& gt, double threshold) {
  check_same_size(pred, gt, "ber");
  const BoolMap p = pred >= threshold;
  const BoolMap g = gt > 0.5;
  const Index np = g.count();
  const Index nn = g.size() - np;
  if (np == 0 || nn == 0) return std::nullopt;
  const double tp = double((p && g).count());
  const double tn = double((!p && !g).count());
  return (1.0 - 0.5 * (tp / double(np) + tn / double(nn))) * 100.0;
}

DistanceTransform distance_transform(const BoolMap& sites) {
  const Index h = sites.rows(), w = sites.cols();
  if (!sites.any()) throw DataError("distance_transform: no foreground pixel");
  const double inf = std::numeric_limits<double>::infinity();
  Map column_d(h, w);
  Eigen::Array<Index, Eigen::Dynamic, Eigen::Dynamic> column_arg(h, w);
  std::vector<double> f, d;
  std::vector<Index> arg;
  for (Index x = 0; x < w; ++x) {
    f.assign(static_cast<std::size_t>(h), inf);
    for (Index y = 0; y < h; ++y) {
      if (sites(y, x)) f[y] = 0.0;
    }
    squared_distance_1d(f, d, arg);
    for (Index y = 0; y < h; ++y) {
      column_d(y, x) = d[y];
      column_arg(y, x) = arg[y];
    }
  }
  DistanceTransform out{Map(h, w), Eigen::Array<Index, Eigen::Dynamic, Eigen::Dynamic>(h, w)};
  for (Index y = 0; y < h; ++y) {
    f.resize(static_cast<std::size_t>(w));
    for (Index x = 0; x < w; ++x) f[x] = column_d(y, x);
    squared_distance_1d(f, d, arg);
    for (Index x = 0; x < w; ++x) {
      const Index sx = arg[x];
      out.squared_distance(y, x) = d[x];
      out.nearest(y, x) = sx * h + column_arg(y, sx);
    }
  }
  return out;
}

std::optional<double> weighted_fbeta(const Map& pred_prob, const Map& gt, double beta2) {
  check_same_size(pred_prob, gt, "weighted_fbeta");
  const BoolMap g = gt > 0.5;
  if (!g.any()) return std::nullopt;
  const Map e = (pred_prob - g.cast<double>()).abs();

  const auto dt = distance_transform(g);
  const Map dst = dt.squared_distance.sqrt();
  Map et = e;
  for (Index i = 0; i < e.size(); ++i) {
    if (!g(i)) et(i) = e(dt.nearest(i));
  }
  const Map ea = correlate_zero_padded(et, gaussian_kernel(kFbetaWindow, kFbetaSigma));
  const Map min_e_ea = (g && ea < e).select(ea, e);
  const Map b = g.select(Map::Ones(g.rows(), g.cols()), 2.0 - (std::log(0.5) / 5.0 * dst).exp());
  const Map ew = min_e_ea * b;

  const double n_fg = double(g.count());
  const double ew_fg = g.select(ew, 0.0).sum();
  const double ew_bg = (!g).select(ew, 0.0).sum();
  const double tpw = n_fg - ew_fg;
  const double fpw = ew_bg;
  const double r = 1.0 - ew_fg / n_fg;
  const double p = tpw / (kEps + tpw + fpw);
  return (1.0 + beta2) * (r * p) / (kEps + r + beta2 * p);
}

ConfusionMatrix::ConfusionMatrix(int n_class) : n_class_(n_class) {
  if (n_class < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.setZero(n_class, n_class);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  check_same_size(pred, gt, "confusion matrix");
  for (Index i = 0; i < gt.size(); ++i) {
    const int g = gt(i), p = pred(i);
    if (g < 0 || g >= n_class_ || p < 0 || p >= n_class_) {
      throw DataError("class id " + std::to_string(g < 0 || g >= n_class_ ? g : p) + " outside [0, " +
                      std::to_string(n_class_) + ")");
    }
    ++counts_(g, p);
  }
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(n_class_));
  for (int c = 0; c < n_class_; ++c) {
    const std::int64_t tp = counts_(c, c);
    const std::int64_t uni = counts_.row(c).sum() + counts_.col(c).sum() - tp;
    if (uni > 0) out[static_cast<std::size_t>(c)] = double(tp) / double(uni);
  }
  return out;
}

double ConfusionMatrix::miou() const {
  double sum = 0;
  int present = 0;
  for (const auto& iou : per_class_iou()) {
    if (!iou) continue;
    sum += *iou;
    ++present;
  }
  return present ? sum / present : 0.0;
}

double ConfusionMatrix::pixel_accuracy() const {
  const std::int64_t total = counts_.sum();
  return total ? double(counts_.matrix().diagonal().sum()) / double(total) : 0.0;
}

MiouResult multiclass_miou(const LabelMap& pred, const LabelMap& gt, int n_class) {
  ConfusionMatrix cm(n_class);
  cm.add(pred, gt);
  return {cm.per_class_iou(), cm.miou()};
}

void EvalAccumulator::add(const LabelMap& pred_labels, const Map& foreground_prob, const LabelMap& gt) {
  confusion_.add(pred_labels, gt);
  const Map g = (gt != 0).cast<double>();
  mae_sum_ += mae(foreground_prob, g);
  iou_sum_ += binary_iou(foreground_prob, g);
  if (auto v = ber(foreground_prob, g)) {
    ber_sum_ += *v;
    ++ber_images_;
  }
  if (auto v = weighted_fbeta(foreground_prob, g)) {
    fbeta_sum_ += *v;
    ++fbeta_images_;
  }
  ++images_;
}

EvalReport EvalAccumulator::report() const {
  EvalReport r;
  const auto ious = confusion_.per_class_iou();
  for (std::size_t c = 0; c < ious.size(); ++c) {
    if (ious[c]) r.per_class_iou[static_cast<int>(c)] = *ious[c];
  }
  r.miou = confusion_.miou();
  r.pixel_acc = confusion_.pixel_accuracy();
  r.images = images_;
  r.fbeta_w_images = fbeta_images_;
  r.ber_images = ber_images_;
  if (images_) {
    r.mae = mae_sum_ / images_;
    r.iou = iou_sum_ / images_;
  }
  if (fbeta_images_) r.fbeta_w = fbeta_sum_ / fbeta_images_;
  if (ber_images_) r.ber = ber_sum_ / ber_images_;
  return r;
}

std::string EvalReport::to_key_value() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "miou_reduction=global_confusion\n";
  out << "images=" << images << "\n";
  out << "miou=" << miou << "\n";
  out << "pixel_acc=" << pixel_acc << "\n";
  out << "fbeta_w=" << fbeta_w << "\n";
  out << "mae=" << mae << "\n";
  out << "ber=" << ber << "\n";
  out << "iou=" << iou << "\n";
  out << "fbeta_w_images=" << fbeta_w_images << "\n";
  out << "ber_images=" << ber_images << "\n";
  for (const auto& [c, v] : per_class_iou) out << "iou_class" << c << "=" << v << "\n";
  return out.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << "mIoU over the dataset-global confusion matrix, " << images << " images\n";
  out << std::fixed << std::setprecision(4);
  out << "  mIoU       " << miou << "\n";
  out << "  pixel acc  " << pixel_acc << "\n";
  out << "  F_beta^w   " << fbeta_w << "  (" << fbeta_w_images << " images)\n";
  out << "  MAE        " << mae << "\n";
  out << "  BER        " << ber << "  (" << ber_images << " images)\n";
  out << "  IoU (fg)   " << iou << "\n";
  for (const auto& [c, v] : per_class_iou) out << "  class " << c << "    " << v << "\n";
  return out.str();
}

}  // namespace transcues::metrics
