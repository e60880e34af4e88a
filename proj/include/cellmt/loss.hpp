#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"
#include "cellmt/tensor.hpp"

namespace cellmt {

inline constexpr double kProbEpsilon = 1e-7;

struct LossWeights {
  double alpha = 1.0;      // count loss
  double beta = 1.0;       // consistency term
  int warmup_epochs = 25;  // consistency disabled for epochs [0, warmup)

  [[nodiscard]] double effective_beta(int epoch) const {
    return epoch >= warmup_epochs ? beta : 0.0;
  }
};

struct LossBreakdown {
  std::optional<double> l_s;
  double l_c = 0;
  std::optional<double> l_t;
  double joint = 0;
  double alpha = 0;
  double beta_effective = 0;
  SupervisionLevel level = SupervisionLevel::D1;
  int epoch = 0;
};

// Mean pixel binary cross entropy with probabilities clamped to [eps, 1-eps].
// `pos_weight` scales the foreground term; 1 gives plain BCE.
template <typename T>
double loss_localization(const Grid<T>& probs, const BinaryMask& gt,
                         double pos_weight = 1.0) {
  if (!probs.same_shape(gt)) {
    throw InvalidArgument("localization loss: prediction " +
                          shape_string(probs.height, probs.width) +
                          " vs ground truth " + shape_string(gt.height, gt.width));
  }
  detail::require(probs.size() > 0, "localization loss on an empty map");
  double sum = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs.data[i]), kProbEpsilon,
                                1.0 - kProbEpsilon);
    const double y = gt.data[i] ? 1.0 : 0.0;
    sum -= pos_weight * y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(probs.size());
}

// d(loss_localization)/d(probability); zero where the clamp is active.
template <typename T>
Grid<double> loss_localization_grad_probs(const Grid<T>& probs, const BinaryMask& gt,
                                          double pos_weight = 1.0) {
  detail::require(probs.same_shape(gt), "localization loss: shape mismatch");
  Grid<double> g(probs.height, probs.width, 0.0);
  const auto n = static_cast<double>(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.data[i];
    if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) continue;
    const double y = gt.data[i] ? 1.0 : 0.0;
    g.data[i] = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / n;
  }
  return g;
}

// Gradient with respect to the pre-sigmoid logits, where p = sigmoid(z).
// Uses the unclamped analytic form so saturated pixels keep a gradient.
template <typename T>
Grid<double> loss_localization_grad_logits(const Grid<T>& probs, const BinaryMask& gt,
                                           double pos_weight = 1.0) {
  detail::require(probs.same_shape(gt), "localization loss: shape mismatch");
  Grid<double> g(probs.height, probs.width, 0.0);
  const auto n = static_cast<double>(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.data[i];
    const double y = gt.data[i] ? 1.0 : 0.0;
    g.data[i] = (p * (pos_weight * y + 1.0 - y) - pos_weight * y) / n;
  }
  return g;
}

inline double loss_count(int c_true, double c_pred) {
  if (c_true < 1) {
    throw InvalidArgument("count loss needs a ground-truth count >= 1, got " +
                          std::to_string(c_true));
  }
  return std::abs(c_true - c_pred) / c_true;
}

// Subgradient; 0 at c_pred == c_true.
inline double loss_count_grad(int c_true, double c_pred) {
  detail::require(c_true >= 1, "count loss needs a ground-truth count >= 1");
  if (c_pred == c_true) return 0.0;
  return (c_pred > c_true ? 1.0 : -1.0) / c_true;
}

// c_from_mask is the component count of the binarized predicted mask. It is an
// integer constant here: the term is differentiable only through c_pred.
inline double loss_consistency(int c_true, double c_pred, int c_from_mask) {
  detail::require(c_true >= 1, "consistency loss needs a ground-truth count >= 1");
  detail::require(c_from_mask >= 0, "component count must be >= 0");
  return std::abs(c_pred - c_from_mask) / c_true;
}

inline double loss_consistency_grad(int c_true, double c_pred, int c_from_mask) {
  detail::require(c_true >= 1, "consistency loss needs a ground-truth count >= 1");
  if (c_pred == c_from_mask) return 0.0;
  return (c_pred > c_from_mask ? 1.0 : -1.0) / c_true;
}

// Which terms are active. The full method uses all three; the single-task
// baselines switch terms off.
struct LossTerms {
  bool localization = true;
  bool count = true;
  bool consistency = true;
};

// Inputs to the joint loss that come from the network and the image.
template <typename T>
struct JointLossInput {
  const Grid<T>& mask_probs;
  double count_estimate;
  int c_from_mask;
};

// Joint loss: (L_S for D1, else 0) + alpha * L_C + beta_eff * L_T.
// beta_eff is 0 during warm-up. The mask must be given for D1 images when the
// localization term is active.
template <typename T>
LossBreakdown joint_loss(const JointLossInput<T>& pred, const AnnotatedImage& gt,
                         const GroundTruthMask* gt_mask, const LossWeights& weights,
                         int epoch, const LossTerms& terms = {}, double pos_weight = 1.0) {
  LossBreakdown b;
  b.level = gt.level;
  b.epoch = epoch;
  b.alpha = terms.count ? weights.alpha : 0.0;
  b.beta_effective = terms.consistency ? weights.effective_beta(epoch) : 0.0;
  const int c_true = gt.count.value;
  b.l_c = loss_count(c_true, pred.count_estimate);
  b.l_t = loss_consistency(c_true, pred.count_estimate, pred.c_from_mask);
  if (terms.localization && gt.level == SupervisionLevel::D1) {
    if (gt_mask == nullptr) {
      throw InvalidArgument("image '" + gt.image_id + "' is D1 but no ground-truth mask was given");
    }
    b.l_s = loss_localization(pred.mask_probs, gt_mask->mask, pos_weight);
  }
  b.joint = b.l_s.value_or(0.0) + b.alpha * b.l_c + b.beta_effective * b.l_t.value_or(0.0);
  return b;
}

// Gradients of the joint loss with respect to the network outputs. The
// localization gradient is absent whenever L_S does not contribute, which is
// what keeps the decoder out of the backward pass for D2 images.
struct JointLossGradient {
  std::optional<Grid<double>> mask_logits;
  double count = 0;
};

template <typename T>
JointLossGradient joint_loss_gradient(const JointLossInput<T>& pred, const AnnotatedImage& gt,
                                      const GroundTruthMask* gt_mask, const LossBreakdown& b,
                                      double pos_weight = 1.0) {
  JointLossGradient g;
  const int c_true = gt.count.value;
  g.count = b.alpha * loss_count_grad(c_true, pred.count_estimate) +
            b.beta_effective * loss_consistency_grad(c_true, pred.count_estimate, pred.c_from_mask);
  if (b.l_s) {
    g.mask_logits = loss_localization_grad_logits(pred.mask_probs, gt_mask->mask, pos_weight);
  }
  return g;
}

}  // namespace cellmt
