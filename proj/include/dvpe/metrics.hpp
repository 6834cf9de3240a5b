#pragma once

#include "dvpe/model.hpp"

#include <map>
#include <span>
#include <vector>

namespace dvpe {

struct FrameDetections {
  std::vector<WorldBox> preds;  // scored, labelled
  std::vector<WorldBox> gts;
};

struct ClassMetrics {
  std::vector<double> ap;  // per threshold
  double mean_ap = 0.0;
  std::size_t gts = 0;
  std::size_t tps = 0;  // at the error threshold
};

struct MetricsReport {
  std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
  std::vector<double> ap_by_threshold;  // mean over classes
  double map = 0.0;
  double mate = 0.0;
  double maoe = 0.0;
  double mave = 0.0;
  std::size_t true_positives = 0;  // at the error threshold
  std::map<int, ClassMetrics> per_class;
};

/// 101-point interpolated AP from score-sorted TP flags.
double average_precision(std::span<const std::uint8_t> tp_sorted, std::size_t num_gts);

/// Center-distance AP: greedy score-ordered matching in BEV, per class and
/// threshold. Error metrics average over true positives at `error_threshold`.
MetricsReport evaluate(std::span<const FrameDetections> frames, int classes, double error_threshold = 2.0);

}  // namespace dvpe
