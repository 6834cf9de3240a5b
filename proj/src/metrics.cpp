#include "dvpe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvpe {

double average_precision(std::span<const std::uint8_t> tp_sorted, std::size_t num_gts) {
  if (num_gts == 0) return 0.0;
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_sorted.size(); ++i) {
    tp += tp_sorted[i] ? 1 : 0;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(num_gts));
  }
  // Precision envelope, then sample at recall 0, 0.01, ..., 1.
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    while (k < rec.size() && rec[k] < target - 1e-12) ++k;
    if (k < rec.size()) sum += prec[k];
  }
  return sum / 101.0;
}

namespace {

struct Match {
  std::vector<std::uint8_t> tp;
  std::vector<const WorldBox*> pred_box;
  std::vector<const WorldBox*> gt_box;
};

Match match_class(std::span<const FrameDetections> frames, int label, double thr) {
  struct Item {
    double score;
    std::size_t frame, pred;
  };
  std::vector<Item> items;
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i)
      if (frames[f].preds[i].label == label) items.push_back({frames[f].preds[i].score, f, i});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<std::uint8_t>> taken(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(frames[f].gts.size(), 0);
  Match m;
  for (const auto& it : items) {
    const auto& p = frames[it.frame].preds[it.pred];
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    const auto& gts = frames[it.frame].gts;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].label != label || taken[it.frame][j]) continue;
      const double d = (p.center - gts[j].center).head<2>().norm();
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    const bool hit = best <= thr;
    m.tp.push_back(hit ? 1 : 0);
    if (hit) {
      taken[it.frame][best_j] = 1;
      m.pred_box.push_back(&p);
      m.gt_box.push_back(&gts[best_j]);
    }
  }
  return m;
}

}  // namespace

MetricsReport evaluate(std::span<const FrameDetections> frames, int classes, double error_threshold) {
  MetricsReport rep;
  rep.ap_by_threshold.assign(rep.thresholds.size(), 0.0);
  std::size_t present = 0;
  double ate = 0.0, aoe = 0.0, ave = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::size_t ngt = 0;
    for (const auto& f : frames)
      for (const auto& g : f.gts) ngt += g.label == c ? 1 : 0;
    if (ngt == 0) continue;
    ++present;
    ClassMetrics cm;
    cm.gts = ngt;
    for (std::size_t t = 0; t < rep.thresholds.size(); ++t) {
      const auto m = match_class(frames, c, rep.thresholds[t]);
      const double ap = average_precision(m.tp, ngt);
      cm.ap.push_back(ap);
      rep.ap_by_threshold[t] += ap;
    }
    const auto m = match_class(frames, c, error_threshold);
    cm.tps = m.pred_box.size();
    for (std::size_t i = 0; i < m.pred_box.size(); ++i) {
      const auto& p = *m.pred_box[i];
      const auto& g = *m.gt_box[i];
      ate += (p.center - g.center).head<2>().norm();
      aoe += std::abs(wrap_angle(p.yaw - g.yaw));
      ave += (p.velocity - g.velocity).norm();
    }
    rep.true_positives += cm.tps;
    double s = 0.0;
    for (double a : cm.ap) s += a;
    cm.mean_ap = s / static_cast<double>(cm.ap.size());
    rep.per_class[c] = std::move(cm);
  }
  if (present > 0)
    for (auto& a : rep.ap_by_threshold) a /= static_cast<double>(present);
  double s = 0.0;
  for (double a : rep.ap_by_threshold) s += a;
  rep.map = rep.ap_by_threshold.empty() ? 0.0 : s / static_cast<double>(rep.ap_by_threshold.size());
  if (rep.true_positives > 0) {
    const double n = static_cast<double>(rep.true_positives);
    rep.mate = ate / n;
    rep.maoe = aoe / n;
    rep.mave = ave / n;
  }
  return rep;
}

}  // namespace dvpe
