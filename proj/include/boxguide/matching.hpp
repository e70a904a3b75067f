#pragma once

// Set-prediction matching between predicted and ground-truth entity boxes,
// plus the box regression loss optimised under the resulting assignment.

#include "boxguide/box.hpp"

#include <Eigen/Dense>

#include <array>
#include <utility>
#include <vector>

namespace boxguide {

struct LossWeights {
  double class_penalty = 100.0;
  double iou = 2.0;
  double l1 = 5.0;
};

struct LabeledBox {
  Box<double> box;
  int category = 0;
};

struct MatchProblem {
  std::vector<LabeledBox> predictions;
  std::vector<LabeledBox> ground_truth;
  LossWeights weights;
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, ground-truth index), sorted
  double total_cost = 0.0;
};

/// weights.iou * (1 - giou) + weights.l1 * sum |pred - gt| over (cx, cy, w, h).
double box_loss(const Box<double>& pred, const Box<double>& gt, const LossWeights& weights = {});

struct BoxLossGradient {
  double loss = 0.0;
  std::array<double, 4> d_pred{};  // d loss / d (cx, cy, w, h)
};

/// Analytic (sub)gradient of box_loss with respect to the predicted box.
BoxLossGradient box_loss_gradient(const Box<double>& pred, const Box<double>& gt,
                                  const LossWeights& weights = {});

/// Class-mismatch penalty plus box_loss.
double match_cost(const LabeledBox& pred, const LabeledBox& gt, const LossWeights& weights = {});

/// Rows are predictions, columns are ground truth.
Eigen::MatrixXd cost_matrix(const MatchProblem& problem);

/// Minimum-cost injective assignment of min(rows, cols) pairs. Among optimal
/// assignments the lexicographically smallest pair list is returned. Throws
/// std::invalid_argument on non-finite costs.
Assignment solve_assignment(const Eigen::MatrixXd& cost);

Assignment hungarian_match(const MatchProblem& problem);

/// Removes zero-area boxes (logged as a warning).
std::vector<LabeledBox> drop_degenerate(const std::vector<LabeledBox>& boxes);

/// Sum of box_loss over matched pairs; the class penalty only shapes the matching.
double boxnet_loss(const std::vector<LabeledBox>& predictions,
                   const std::vector<LabeledBox>& ground_truth, const LossWeights& weights = {});

}  // namespace boxguide
