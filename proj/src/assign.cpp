#include "dvpe/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dvpe {

Eigen::MatrixXd pairwise_cost(std::span<const WorldBox> preds, std::span<const WorldBox> gts, const CostWeights& w) {
  if (preds.empty()) throw std::invalid_argument("pairwise_cost: no predictions");
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(preds.size()), static_cast<Eigen::Index>(gts.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const auto label = static_cast<std::size_t>(gts[j].label);
      if (label >= preds[i].logits.size()) throw std::invalid_argument("pairwise_cost: gt label out of range");
      const double p = sigmoid(preds[i].logits[label]);
      const double l1 = (preds[i].center - gts[j].center).cwiseAbs().sum();
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w.cls * -p + w.box * l1;
    }
  return cost;
}

namespace {

// Shortest augmenting path on an n x m matrix with n <= m; returns the
// column assigned to each row.
std::vector<int> solve_rows(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("hungarian: non-finite cost");
  Assignment out;
  const int preds = static_cast<int>(cost.rows()), gts = static_cast<int>(cost.cols());
  if (gts == 0) return out;
  if (preds == 0) {
    for (int j = 0; j < gts; ++j) out.unmatched_gts.push_back(j);
    return out;
  }
  std::vector<int> gt_to_pred(static_cast<std::size_t>(gts), -1);
  if (gts <= preds) {
    gt_to_pred = solve_rows(cost.transpose());
  } else {
    const auto pred_to_gt = solve_rows(cost);
    for (int i = 0; i < preds; ++i) gt_to_pred[static_cast<std::size_t>(pred_to_gt[static_cast<std::size_t>(i)])] = i;
  }
  for (int j = 0; j < gts; ++j) {
    const int i = gt_to_pred[static_cast<std::size_t>(j)];
    if (i < 0) {
      out.unmatched_gts.push_back(j);
      continue;
    }
    out.pairs.emplace_back(i, j);
    out.total_cost += cost(i, j);
  }
  return out;
}

std::vector<Assignment> one_to_many_assign(const std::vector<std::vector<WorldBox>>& groups,
                                           std::span<const WorldBox> gts, const CostWeights& w) {
  std::vector<Assignment> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.empty() || gts.empty()) {
      Assignment a;
      for (std::size_t j = 0; j < gts.size(); ++j) a.unmatched_gts.push_back(static_cast<int>(j));
      out.push_back(std::move(a));
      continue;
    }
    out.push_back(hungarian(pairwise_cost(g, gts, w)));
  }
  return out;
}

}  // namespace dvpe
