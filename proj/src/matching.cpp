#include "boxguide/matching.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace boxguide {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// One clamped corner coordinate c = clamp(center + k * extent, 0, 1) and its
// partial derivatives with respect to (center, extent).
struct Coord {
  double value;
  double d_center;
  double d_extent;
};

Coord corner(double center, double extent, double k) {
  const double raw = center + k * extent;
  if (raw < 0.0) return {0.0, 0.0, 0.0};
  if (raw > 1.0) return {1.0, 0.0, 0.0};
  return {raw, 1.0, k};
}

// Hungarian algorithm (shortest augmenting paths with potentials) for an
// n x m matrix with n <= m. Returns the column assigned to each row.
std::vector<int> hungarian_rows(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

struct SubSolution {
  double cost = 0.0;
  int matched = 0;
};

// Optimal cost over the given rows x cols submatrix (min(rows, cols) pairs).
SubSolution optimal_cost(const Eigen::MatrixXd& cost, const std::vector<int>& rows,
                         const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) return {};
  const bool transpose = rows.size() > cols.size();
  const auto& r = transpose ? cols : rows;
  const auto& c = transpose ? rows : cols;
  Eigen::MatrixXd sub(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      sub(i, j) = transpose ? cost(c[j], r[i]) : cost(r[i], c[j]);
    }
  }
  const auto assign = hungarian_rows(sub);
  SubSolution out;
  for (std::size_t i = 0; i < assign.size(); ++i) {
    out.cost += sub(i, assign[i]);
    ++out.matched;
  }
  return out;
}

}  // namespace

double box_loss(const Box<double>& pred, const Box<double>& gt, const LossWeights& weights) {
  const double l1 = std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
                    std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
  return weights.iou * (1.0 - giou(pred, gt)) + weights.l1 * l1;
}

BoxLossGradient box_loss_gradient(const Box<double>& pred, const Box<double>& gt,
                                  const LossWeights& weights) {
  BoxLossGradient out;
  out.loss = box_loss(pred, gt, weights);

  const Coord ax0 = corner(pred.cx, pred.w, -0.5);
  const Coord ax1 = corner(pred.cx, pred.w, 0.5);
  const Coord ay0 = corner(pred.cy, pred.h, -0.5);
  const Coord ay1 = corner(pred.cy, pred.h, 0.5);
  const CornerBox<double> b = to_corners(gt);

  // d giou / d (x0, y0, x1, y1) of the predicted box.
  std::array<double, 4> dg{};
  const double aw = ax1.value - ax0.value;
  const double ah = ay1.value - ay0.value;
  const double area_a = std::max(0.0, aw) * std::max(0.0, ah);
  const double area_b = b.area();
  const double iw_raw = std::min(ax1.value, b.x1) - std::max(ax0.value, b.x0);
  const double ih_raw = std::min(ay1.value, b.y1) - std::max(ay0.value, b.y0);
  const double iw = std::max(0.0, iw_raw);
  const double ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double hw = std::max(ax1.value, b.x1) - std::min(ax0.value, b.x0);
  const double hh = std::max(ay1.value, b.y1) - std::min(ay0.value, b.y0);
  const double hull = hw * hh;

  std::array<double, 4> d_inter{};
  if (iw_raw > 0.0 && ih_raw > 0.0) {
    if (ax0.value > b.x0) d_inter[0] = -ih;
    if (ay0.value > b.y0) d_inter[1] = -iw;
    if (ax1.value < b.x1) d_inter[2] = ih;
    if (ay1.value < b.y1) d_inter[3] = iw;
  }
  std::array<double, 4> d_area{};
  if (aw > 0.0 && ah > 0.0) d_area = {-ah, -aw, ah, aw};
  std::array<double, 4> d_hull{};
  if (ax0.value < b.x0) d_hull[0] = -hh;
  if (ay0.value < b.y0) d_hull[1] = -hw;
  if (ax1.value > b.x1) d_hull[2] = hh;
  if (ay1.value > b.y1) d_hull[3] = hw;

  const bool iou_defined = area_a > 0.0 && area_b > 0.0 && uni > 0.0;
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    double d = 0.0;
    if (iou_defined) d += (d_inter[k] * uni - inter * d_uni) / (uni * uni);
    if (hull > 0.0) d += (d_uni * hull - uni * d_hull[k]) / (hull * hull);
    dg[k] = d;
  }

  // Chain through the clamped cxcywh -> xyxy conversion.
  const double gi = -weights.iou;
  out.d_pred[0] = gi * (dg[0] * ax0.d_center + dg[2] * ax1.d_center);
  out.d_pred[1] = gi * (dg[1] * ay0.d_center + dg[3] * ay1.d_center);
  out.d_pred[2] = gi * (dg[0] * ax0.d_extent + dg[2] * ax1.d_extent);
  out.d_pred[3] = gi * (dg[1] * ay0.d_extent + dg[3] * ay1.d_extent);
  out.d_pred[0] += weights.l1 * sign(pred.cx - gt.cx);
  out.d_pred[1] += weights.l1 * sign(pred.cy - gt.cy);
  out.d_pred[2] += weights.l1 * sign(pred.w - gt.w);
  out.d_pred[3] += weights.l1 * sign(pred.h - gt.h);
  return out;
}

double match_cost(const LabeledBox& pred, const LabeledBox& gt, const LossWeights& weights) {
  const double penalty = pred.category != gt.category ? weights.class_penalty : 0.0;
  return penalty + box_loss(pred.box, gt.box, weights);
}

Eigen::MatrixXd cost_matrix(const MatchProblem& problem) {
  Eigen::MatrixXd cost(problem.predictions.size(), problem.ground_truth.size());
  for (std::size_t i = 0; i < problem.predictions.size(); ++i) {
    for (std::size_t j = 0; j < problem.ground_truth.size(); ++j) {
      cost(i, j) = match_cost(problem.predictions[i], problem.ground_truth[j], problem.weights);
    }
  }
  return cost;
}

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("solve_assignment: non-finite cost");
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  Assignment out;
  const int k = std::min(n, m);
  if (k == 0) return out;

  std::vector<int> all_rows(n), all_cols(m);
  for (int i = 0; i < n; ++i) all_rows[i] = i;
  for (int j = 0; j < m; ++j) all_cols[j] = j;
  const double best = optimal_cost(cost, all_rows, all_cols).cost;
  const double tol = 1e-9 * std::max(1.0, std::abs(best));

  // Fix pairs one at a time, always taking the smallest (row, col) that can
  // still be completed to an optimal assignment.
  std::vector<char> col_used(m, 0);
  double prefix = 0.0;
  int last_row = -1;
  while (static_cast<int>(out.pairs.size()) < k) {
    bool fixed = false;
    for (int i = last_row + 1; i < n && !fixed; ++i) {
      for (int j = 0; j < m && !fixed; ++j) {
        if (col_used[j]) continue;
        std::vector<int> rows, cols;
        for (int r = i + 1; r < n; ++r) rows.push_back(r);
        for (int c = 0; c < m; ++c) {
          if (!col_used[c] && c != j) cols.push_back(c);
        }
        const int need = k - static_cast<int>(out.pairs.size()) - 1;
        const SubSolution rest = optimal_cost(cost, rows, cols);
        if (rest.matched != need) continue;
        if (prefix + cost(i, j) + rest.cost <= best + tol) {
          out.pairs.emplace_back(i, j);
          prefix += cost(i, j);
          col_used[j] = 1;
          last_row = i;
          fixed = true;
        }
      }
    }
    if (!fixed) throw std::logic_error("solve_assignment: failed to reconstruct optimum");
  }
  out.total_cost = prefix;
  return out;
}

Assignment hungarian_match(const MatchProblem& problem) {
  if (problem.weights.class_penalty < 0.0) {
    throw std::invalid_argument("hungarian_match: class penalty must be nonnegative");
  }
  return solve_assignment(cost_matrix(problem));
}

std::vector<LabeledBox> drop_degenerate(const std::vector<LabeledBox>& boxes) {
  std::vector<LabeledBox> kept;
  kept.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (to_corners(b.box).area() <= 0.0) {
      spdlog::warn("dropping zero-area ground-truth box (cx={}, cy={}, w={}, h={})", b.box.cx,
                   b.box.cy, b.box.w, b.box.h);
      continue;
    }
    kept.push_back(b);
  }
  return kept;
}

double boxnet_loss(const std::vector<LabeledBox>& predictions,
                   const std::vector<LabeledBox>& ground_truth, const LossWeights& weights) {
  MatchProblem problem{predictions, ground_truth, weights};
  const Assignment assignment = hungarian_match(problem);
  double total = 0.0;
  for (const auto& [p, g] : assignment.pairs) {
    total += box_loss(predictions[p].box, ground_truth[g].box, weights);
  }
  return total;
}

}  // namespace boxguide
