#include "dvpe/assign.hpp"

#include <cmath>
#include <stdexcept>

namespace dvpe {

template <typename T>
LossResult<T> detection_loss(num::Tape<T>& tape, const DecoderOutput<T>& out, std::span<const WorldBox> gts,
                             const LossConfig& cfg) {
  if (out.layers.empty()) throw std::invalid_argument("detection_loss: no decoder layers");
  const std::size_t M = out.query_group.size();
  int groups = 0;
  for (int g : out.query_group) groups = std::max(groups, g + 1);
  std::vector<std::vector<long>> rows(static_cast<std::size_t>(groups));
  for (std::size_t i = 0; i < M; ++i) rows[static_cast<std::size_t>(out.query_group[i])].push_back(static_cast<long>(i));

  const T norm = static_cast<T>(1.0 / std::max<std::size_t>(1, gts.size()));
  const T wc = static_cast<T>(cfg.w_center), ws = static_cast<T>(cfg.w_size), wy = static_cast<T>(cfg.w_yaw),
          wv = static_cast<T>(cfg.w_vel);
  const std::vector<T> col_w = {wc, wc, wc, ws, ws, ws, wy, wy, wv, wv};

  LossResult<T> res;
  std::vector<num::Var<T>> main_terms, aux_terms;
  double cls_sum = 0.0, box_sum = 0.0;
  for (const auto& layer : out.layers) {
    const auto boxes = decode_boxes(layer, M);
    std::vector<std::vector<WorldBox>> group_boxes(static_cast<std::size_t>(groups));
    for (int g = 0; g < groups; ++g)
      for (long i : rows[static_cast<std::size_t>(g)]) group_boxes[static_cast<std::size_t>(g)].push_back(boxes[static_cast<std::size_t>(i)]);
    auto assignments = one_to_many_assign(group_boxes, gts, cfg.cost);

    for (int g = 0; g < groups; ++g) {
      const auto& idx = rows[static_cast<std::size_t>(g)];
      const auto& asg = assignments[static_cast<std::size_t>(g)];
      num::Tensor<T> cls_target({idx.size(), layer.logits.cols()});
      std::vector<long> matched;
      num::Tensor<T> box_target({asg.pairs.size(), kRegDim});
      for (std::size_t k = 0; k < asg.pairs.size(); ++k) {
        const auto [pi, gi] = asg.pairs[k];
        const auto& gt = gts[static_cast<std::size_t>(gi)];
        cls_target.at(static_cast<std::size_t>(pi), static_cast<std::size_t>(gt.label)) = T(1);
        const long q = idx[static_cast<std::size_t>(pi)];
        matched.push_back(q);
        const LocalBox local = world_to_local(gt, Vec3::Zero(), layer.theta[static_cast<std::size_t>(q)]);
        T* row = box_target.row(k);
        for (int c = 0; c < 3; ++c) {
          row[kRegCenter + static_cast<std::size_t>(c)] = static_cast<T>(gt.center[c]);
          row[kRegLogSize + static_cast<std::size_t>(c)] = static_cast<T>(local.log_size[c]);
        }
        row[kRegYaw] = static_cast<T>(std::sin(local.yaw));
        row[kRegYaw + 1] = static_cast<T>(std::cos(local.yaw));
        row[kRegVel] = static_cast<T>(local.velocity[0]);
        row[kRegVel + 1] = static_cast<T>(local.velocity[1]);
      }
      auto focal = num::sigmoid_focal_loss(num::gather_rows(layer.logits, idx), cls_target, static_cast<T>(cfg.alpha),
                                           static_cast<T>(cfg.gamma));
      num::Var<T> term = num::scale(focal, static_cast<T>(cfg.w_cls));
      cls_sum += static_cast<double>(focal.item() * norm);
      if (!matched.empty()) {
        auto pred = num::concat_cols<T>({num::gather_rows(layer.center, matched),
                                         num::slice_cols(num::gather_rows(layer.reg, matched), kRegLogSize, kRegDim)});
        auto l1 = num::weighted_l1(pred, box_target, std::span<const T>(col_w));
        box_sum += static_cast<double>(l1.item() * norm);
        term = num::add(term, num::scale(l1, static_cast<T>(cfg.w_box)));
      }
      term = num::scale(term, norm);
      (g == 0 ? main_terms : aux_terms).push_back(term);
    }
    res.assignments.push_back(std::move(assignments));
  }
  for (const auto& a : res.assignments.back()) res.breakdown.positives += a.pairs.size();

  res.l3d = main_terms.size() == 1 ? main_terms[0] : num::sum(num::concat_rows(main_terms));
  res.total = num::scale(res.l3d, static_cast<T>(cfg.lambda1));
  res.breakdown.l3d = static_cast<double>(res.l3d.item());
  if (!aux_terms.empty()) {
    res.l3d_aux = aux_terms.size() == 1 ? aux_terms[0] : num::sum(num::concat_rows(aux_terms));
    res.total = num::add(res.total, num::scale(res.l3d_aux, static_cast<T>(cfg.lambda3)));
    res.breakdown.l3d_aux = static_cast<double>(res.l3d_aux.item());
  }
  res.breakdown.lambda1 = cfg.lambda1;
  res.breakdown.lambda3 = cfg.lambda3;
  res.breakdown.cls = cls_sum;
  res.breakdown.box = box_sum;
  res.breakdown.total = static_cast<double>(res.total.item());
  (void)tape;
  return res;
}

template LossResult<float> detection_loss(num::Tape<float>&, const DecoderOutput<float>&, std::span<const WorldBox>,
                                          const LossConfig&);
template LossResult<double> detection_loss(num::Tape<double>&, const DecoderOutput<double>&, std::span<const WorldBox>,
                                           const LossConfig&);

}  // namespace dvpe
