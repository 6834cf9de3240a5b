#pragma once

#include "dvpe/geom.hpp"
#include "dvpe/num/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dvpe {

struct PartitionConfig {
  int views = 6;
  double theta_s = 0.0;      // starting shift at layer 0, radians
  double shift_step = 0.0;   // added per decoder layer, radians

  void validate() const;
};

/// Wedge index of a point: floor(V * (atan2(y, x) mod 2pi + theta_s) / 2pi) mod V.
/// Points on the z-axis land in wedge 0 and bump diagnostics().degenerate_origin.
int group_index(const Vec3& p, int views, double theta_s);
inline int group_index(const Vec3& p, const PartitionConfig& cfg) { return group_index(p, cfg.views, cfg.theta_s); }

/// Shift angle used by decoder layer `layer`, wrapped to [0, 2pi).
double shift_schedule(int layer, const PartitionConfig& cfg);

/// Rotation that maps the bisector of wedge v onto the virtual +x axis.
double virtual_rotation(int group, int views, double theta_s);

/// Grouping of n items into V wedges plus the padded [V x max_len] layout.
struct ViewPartition {
  int views = 1;
  double theta_s = 0.0;
  std::vector<int> group;                          // per item
  std::vector<std::vector<std::size_t>> members;   // per wedge, ascending item order
  std::size_t max_len = 0;
  std::vector<std::uint8_t> mask;                  // views * max_len
  std::vector<double> theta;                       // per wedge rotation angle

  std::size_t items() const { return group.size(); }
  std::size_t slots() const { return static_cast<std::size_t>(views) * max_len; }
  /// Item index for every padded slot, -1 for padding.
  std::vector<long> slot_items() const;
  /// Padded slot of every item.
  std::vector<long> item_slots() const;
  /// Per-slot rotation angle (wedge angle repeated max_len times).
  std::vector<double> slot_angles() const;
};

ViewPartition partition_points(std::span<const Vec3> points, int views, double theta_s);
ViewPartition partition_items(std::span<const Vec3> points, const PartitionConfig& cfg, int layer);

/// Items [n x C] into [V x max_len x C]; padding slots carry `fill`.
template <typename T>
num::Tensor<T> gather_pad(const num::Tensor<T>& items, const ViewPartition& part, T fill);

/// Inverse of gather_pad on valid slots.
template <typename T>
num::Tensor<T> scatter_unpad(const num::Tensor<T>& padded, const ViewPartition& part);

}  // namespace dvpe
