#include "dvpe/partition.hpp"

#include "dvpe/diagnostics.hpp"
#include "dvpe/num/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace dvpe {

void PartitionConfig::validate() const {
  if (views < 1) throw std::invalid_argument("PartitionConfig: views must be >= 1");
  if (!(shift_step >= 0.0)) throw std::invalid_argument("PartitionConfig: shift_step must be >= 0");
  if (!std::isfinite(theta_s)) throw std::invalid_argument("PartitionConfig: theta_s must be finite");
}

int group_index(const Vec3& p, int views, double theta_s) {
  if (views < 1) throw std::invalid_argument("group_index: views must be >= 1");
  if (p.x() == 0.0 && p.y() == 0.0) {
    ++diagnostics().degenerate_origin;
    return 0;
  }
  const double a = bev_angle(p);
  const double f = std::floor(views * (a + theta_s) / kTwoPi);
  long g = static_cast<long>(f) % views;
  if (g < 0) g += views;
  return static_cast<int>(g);
}

double shift_schedule(int layer, const PartitionConfig& cfg) {
  if (layer < 0) throw std::invalid_argument("shift_schedule: negative layer");
  double s = std::fmod(cfg.theta_s + layer * cfg.shift_step, kTwoPi);
  if (s < 0.0) s += kTwoPi;
  return s;
}

double virtual_rotation(int group, int views, double theta_s) {
  return -(kTwoPi * (group + 0.5) / views - theta_s);
}

std::vector<long> ViewPartition::slot_items() const {
  std::vector<long> out(slots(), -1);
  for (std::size_t v = 0; v < members.size(); ++v)
    for (std::size_t k = 0; k < members[v].size(); ++k) out[v * max_len + k] = static_cast<long>(members[v][k]);
  return out;
}

std::vector<long> ViewPartition::item_slots() const {
  std::vector<long> out(items(), -1);
  for (std::size_t v = 0; v < members.size(); ++v)
    for (std::size_t k = 0; k < members[v].size(); ++k) out[members[v][k]] = static_cast<long>(v * max_len + k);
  return out;
}

std::vector<double> ViewPartition::slot_angles() const {
  std::vector<double> out(slots());
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = theta[s / max_len];
  return out;
}

ViewPartition partition_points(std::span<const Vec3> points, int views, double theta_s) {
  if (views < 1) throw std::invalid_argument("partition_points: views must be >= 1");
  ViewPartition part;
  part.views = views;
  part.theta_s = theta_s;
  part.members.resize(static_cast<std::size_t>(views));
  part.group.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int g = group_index(points[i], views, theta_s);
    part.group.push_back(g);
    part.members[static_cast<std::size_t>(g)].push_back(i);
  }
  for (const auto& m : part.members) part.max_len = std::max(part.max_len, m.size());
  part.mask.assign(part.slots(), 0);
  for (std::size_t v = 0; v < part.members.size(); ++v)
    for (std::size_t k = 0; k < part.members[v].size(); ++k) part.mask[v * part.max_len + k] = 1;
  for (int v = 0; v < views; ++v) part.theta.push_back(virtual_rotation(v, views, theta_s));
  return part;
}

ViewPartition partition_items(std::span<const Vec3> points, const PartitionConfig& cfg, int layer) {
  cfg.validate();
  if (points.empty()) throw std::invalid_argument("partition_items: need at least one item");
  return partition_points(points, cfg.views, shift_schedule(layer, cfg));
}

template <typename T>
num::Tensor<T> gather_pad(const num::Tensor<T>& items, const ViewPartition& part, T fill) {
  if (items.rows() != part.items())
    throw std::invalid_argument("gather_pad: " + std::to_string(items.rows()) + " items for a partition of " +
                                std::to_string(part.items()));
  const auto idx = part.slot_items();
  return num::gather_rows(items, idx, fill, {static_cast<std::size_t>(part.views), part.max_len, items.cols()});
}

template <typename T>
num::Tensor<T> scatter_unpad(const num::Tensor<T>& padded, const ViewPartition& part) {
  if (padded.rows() != part.slots())
    throw std::invalid_argument("scatter_unpad: padded rows do not match the partition layout");
  const auto idx = part.item_slots();
  return num::gather_rows(padded, idx, T{0});
}

template num::Tensor<float> gather_pad(const num::Tensor<float>&, const ViewPartition&, float);
template num::Tensor<double> gather_pad(const num::Tensor<double>&, const ViewPartition&, double);
template num::Tensor<float> scatter_unpad(const num::Tensor<float>&, const ViewPartition&);
template num::Tensor<double> scatter_unpad(const num::Tensor<double>&, const ViewPartition&);

}  // namespace dvpe
