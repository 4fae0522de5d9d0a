#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace transcues::metrics {

// Maps are (H, W); binary ground truth is any value > 0.5.
using Map = Eigen::ArrayXXd;
using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kFbetaBeta2 = 0.3;
inline constexpr double kFbetaSigma = 5.0;
inline constexpr int kFbetaWindow = 7;

// |P_b and G| / |P_b or G| with P_b = pred >= threshold; 1 when both are empty.
double binary_iou(const Map& pred_prob, const Map& gt, double threshold = 0.5);

// Mean |P - G|.
double mae(const Map& pred_prob, const Map& gt);

// (1 - (TP/Np + TN/Nn) / 2) * 100 on a thresholded prediction; empty when
// the ground truth lacks either positives or negatives.
std::optional<double> ber(const Map& pred, const Map& gt, double threshold = 0.5);

// Weighted F-measure of Margolin et al.; empty when the ground truth has no
// foreground.
std::optional<double> weighted_fbeta(const Map& pred_prob, const Map& gt, double beta2 = kFbetaBeta2);

// Squared Euclidean distance to the nearest nonzero pixel of `sites` and the
// flat (column-major) index of that pixel. Requires at least one site.
struct DistanceTransform {
  Map squared_distance;
  Eigen::Array<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> nearest;
};
DistanceTransform distance_transform(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& sites);

// Dataset-level class confusion counts.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_class);

  // DataError when a value falls outside [0, n_class).
  void add(const LabelMap& pred, const LabelMap& gt);

  int n_class() const { return n_class_; }
  std::int64_t count(int gt_class, int pred_class) const { return counts_(gt_class, pred_class); }

  // Empty for classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class_iou() const;
  double miou() const;
  double pixel_accuracy() const;

 private:
  int n_class_;
  Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0;
};

MiouResult multiclass_miou(const LabelMap& pred, const LabelMap& gt, int n_class);

// Aggregate over a dataset: mIoU and pixel accuracy from the global confusion
// matrix; the binary foreground metrics are image means over the images
// where they are defined.
struct EvalReport {
  std::map<int, double> per_class_iou;
  double miou = 0;
  double pixel_acc = 0;
  double fbeta_w = 0;
  double mae = 0;
  double ber = 0;
  double iou = 0;
  int images = 0;
  int fbeta_w_images = 0;
  int ber_images = 0;

  std::string to_key_value() const;
  std::string to_table() const;
};

class EvalAccumulator {
 public:
  explicit EvalAccumulator(int n_class) : confusion_(n_class) {}

  // pred_labels: argmax prediction; foreground_prob: 1 - P(background).
  void add(const LabelMap& pred_labels, const Map& foreground_prob, const LabelMap& gt);
  EvalReport report() const;

 private:
  ConfusionMatrix confusion_;
  double fbeta_sum_ = 0, mae_sum_ = 0, ber_sum_ = 0, iou_sum_ = 0;
  int images_ = 0, fbeta_images_ = 0, ber_images_ = 0;
};

}  // namespace transcues::metrics
