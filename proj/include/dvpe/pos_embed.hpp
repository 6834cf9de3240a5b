#pragma once

#include "dvpe/geom.hpp"
#include "dvpe/num/ops.hpp"
#include "dvpe/partition.hpp"

#include <span>
#include <vector>

namespace dvpe {

/// Box of the perception range mapped to [0,1]^3 before encoding.
struct PerceptionRange {
  double xy = 61.2;
  double z_min = -10.0;
  double z_max = 10.0;

  Vec3 normalize(const Vec3& p) const {
    return {(p.x() + xy) / (2.0 * xy), (p.y() + xy) / (2.0 * xy), (p.z() - z_min) / (z_max - z_min)};
  }
};

/// Grouped points rotated into the shared virtual frame of their wedge.
struct VirtualCoords {
  ViewPartition query_part;
  ViewPartition token_part;
  std::vector<Vec3> query_points;  // per query, virtual frame
  std::vector<Vec3> ray_points;    // per token x depth bin, virtual frame
  std::size_t depth_bins = 0;

  /// [V x Lq x 3] padded copy; padding rows are zero.
  num::Tensor<double> padded_queries() const;
};

VirtualCoords to_virtual(const ViewPartition& query_part, std::span<const Vec3> ref_points,
                         const ViewPartition& token_part, const RayGrid& rays);

template <typename T>
struct DvpeParams {
  num::Mlp<T> psi;  // query encoder over sincos features
  num::Mlp<T> xi;   // key encoder over the flattened ray
  int num_freqs = 64;
  int key_freqs = 0;  // 0: raw normalized rays into xi
  double max_freq = 64.0;
  std::size_t dim = 0;
  PerceptionRange range;

  static DvpeParams create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                           std::size_t depth_bins, int num_freqs, std::size_t hidden, num::Rng& rng,
                           double max_freq = 64.0, PerceptionRange range = {}, int key_freqs = 0);
};

/// Query encoder psi applied to points given in meters: sincos over 2*pi times
/// the normalized coordinates, then the MLP. Output [n x C].
template <typename T>
num::Var<T> encode_points(num::Tape<T>& tape, const num::Mlp<T>& mlp, num::Var<T> points, int num_freqs,
                          double max_freq, const PerceptionRange& range);

/// Q_pe for queries whose virtual coordinates are `virtual_points` [n x 3];
/// scattered to the padded [V*Lq x C] layout with zeroed padding.
template <typename T>
num::Var<T> encode_query_pe(num::Tape<T>& tape, const DvpeParams<T>& params, num::Var<T> virtual_points,
                            const ViewPartition& part);
template <typename T>
num::Var<T> encode_query_pe(num::Tape<T>& tape, const DvpeParams<T>& params, const VirtualCoords& vc);

/// K_pe from the virtual rays, padded [V*Lk x C] with zeroed padding.
template <typename T>
num::Var<T> encode_key_pe(num::Tape<T>& tape, const DvpeParams<T>& params, const VirtualCoords& vc);

/// Normalized, flattened rays [tokens x D*3] for the key encoder.
template <typename T>
num::Tensor<T> ray_features(std::span<const Vec3> ray_points, std::size_t depth_bins, const PerceptionRange& range);

}  // namespace dvpe
