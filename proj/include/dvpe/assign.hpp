#pragma once

#include "dvpe/model.hpp"

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace dvpe {

struct CostWeights {
  double cls = 2.0;
  double box = 0.25;
};

/// cost[i, j] = w_cls * -sigmoid(logit_i[label_j]) + w_box * |c_i - c_j|_1.
Eigen::MatrixXd pairwise_cost(std::span<const WorldBox> preds, std::span<const WorldBox> gts, const CostWeights& w = {});

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (pred, gt), ascending gt
  std::vector<int> unmatched_gts;
  double total_cost = 0.0;                 // summed in ascending gt order
};

/// Minimum-cost matching of gts (columns) to preds (rows). Non-finite costs throw.
Assignment hungarian(const Eigen::MatrixXd& cost);

/// Independent matching per query group.
std::vector<Assignment> one_to_many_assign(const std::vector<std::vector<WorldBox>>& groups,
                                           std::span<const WorldBox> gts, const CostWeights& w = {});

struct LossConfig {
  double lambda1 = 1.0;  // default group
  double lambda3 = 1.0;  // additional groups
  double alpha = 0.25;
  double gamma = 2.0;
  CostWeights cost;
  double w_cls = 2.0;  // focal term
  double w_box = 0.25;  // L1 term
  double w_center = 1.0;
  double w_size = 1.0;
  double w_yaw = 1.0;
  double w_vel = 0.25;
};

struct LossBreakdown {
  double total = 0.0;
  double l3d = 0.0;      // default group
  double l3d_aux = 0.0;  // additional groups
  double l2d = 0.0;      // not modelled
  double l3d_dn = 0.0;   // not modelled
  double lambda1 = 1.0;
  double lambda3 = 1.0;
  double cls = 0.0;      // focal part of l3d + l3d_aux before weighting
  double box = 0.0;      // L1 part
  std::size_t positives = 0;  // matched pairs in the final layer, all groups
};

template <typename T>
struct LossResult {
  num::Var<T> total;
  num::Var<T> l3d;
  num::Var<T> l3d_aux;
  LossBreakdown breakdown;
  std::vector<std::vector<Assignment>> assignments;  // [layer][group]
};

/// Focal classification over every query plus L1 on matched boxes, summed
/// over layers and normalized by the gt count.
template <typename T>
LossResult<T> detection_loss(num::Tape<T>& tape, const DecoderOutput<T>& out, std::span<const WorldBox> gts,
                             const LossConfig& cfg);

}  // namespace dvpe
