#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "faq_agg/detr_core.hpp"
#include "faq_agg/synthetic_video.hpp"

namespace faq {

/// Weights shared by the matching cost and the loss.
struct LossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double noobj = 0.1;  // class weight of the no-object target

  void validate() const;
};

struct Assignment {
  std::vector<ag::MatchPair> pairs;  // sorted by query index
  double total_cost = 0.0;
};

/// cost(i, j) = -cls * p_i(class_j) + l1 * |b_i - b_j|_1 + giou * (1 - giou(b_i, b_j)).
template <class T>
Eigen::MatrixXd pairwise_cost(const PredictionSet<T>& preds, const FrameAnnotation& gts, const LossWeights& w);

/// Minimum-cost injective assignment of size min(rows, cols).
Assignment hungarian(const Eigen::MatrixXd& cost);

template <class T>
struct LossBreakdown {
  ag::Var<T> total;       // differentiable
  double classification = 0.0;
  double box_l1 = 0.0;
  double giou = 0.0;
  std::string branch;     // "dynamic", "basic", or "dynamic+basic"
  std::vector<LossBreakdown> parts;

  double total_value() const { return static_cast<double>(total.item()); }
};

/// Per-frame set-prediction loss: weighted cross-entropy over all queries
/// (unmatched ones target no-object) plus L1 and GIoU on matched pairs, each
/// normalized by max(#gt, 1).
template <class T>
LossBreakdown<T> hungarian_loss(const PredictionSet<T>& preds, const FrameAnnotation& gts, const LossWeights& w,
                                const std::string& branch = "dynamic");

/// Same loss for a fixed assignment (used by oracles and gradient checks).
template <class T>
LossBreakdown<T> assignment_loss(const PredictionSet<T>& preds, const FrameAnnotation& gts,
                                 const std::vector<ag::MatchPair>& pairs, const LossWeights& w,
                                 const std::string& branch = "dynamic");

/// L(P_d) + gamma * L(P_b); each branch is matched independently. Components
/// of the result are the gamma-weighted sums of the branch components.
template <class T>
LossBreakdown<T> dual_loss(const PredictionSet<T>& p_dynamic, const PredictionSet<T>& p_basic,
                           const FrameAnnotation& gts, double gamma, const LossWeights& w);

}  // namespace faq
