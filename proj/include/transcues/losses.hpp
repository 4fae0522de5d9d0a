#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "transcues/boundary.hpp"

namespace transcues {

// Integer class ids for a batch, NHW order.
struct LabelBatch {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> labels;

  Index pixels() const { return batch * height * width; }
};

struct LossWeights {
  double alpha = 1.0;  // semantic
  double beta = 0.1;   // boundary
  double gamma = 0.1;  // reflection

  void validate() const;  // ConfigError on a negative weight
};

struct LossBreakdown {
  double semantic = 0;
  double boundary = 0;
  double reflection = 0;
  double total = 0;
};

inline constexpr double kDiceSmoothing = 1.0;

// Mean per-pixel softmax cross-entropy; ids outside [0, n_class) raise DataError.
template <typename Scalar>
Var<Scalar> semantic_loss(const Var<Scalar>& logits, const LabelBatch& gt);

// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps) over all elements.
template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& pred, const Var<Scalar>& target, Scalar smoothing = Scalar(kDiceSmoothing));

// Dice between the combined Sobel fields of the predicted mask and of the
// ground-truth mask. Both (B, 1, H, W).
template <typename Scalar>
Var<Scalar> boundary_loss(const Var<Scalar>& pred_mask, const Var<Scalar>& gt_mask);

// Cross-entropy of the 2-class reflection logits, upsampled to the label
// resolution, against the reflective pseudo ground truth.
template <typename Scalar>
Var<Scalar> reflection_loss(const Var<Scalar>& reflection_logits, const LabelBatch& gt,
                            const std::set<std::int32_t>& reflective_ids);

// (B, 1, H, W) map that is 1 on every non-background pixel.
template <typename Scalar>
Tensor<Scalar> foreground_mask(const LabelBatch& gt);

LossBreakdown total_loss(double semantic, double boundary, double reflection, const LossWeights& weights);

}  // namespace transcues
