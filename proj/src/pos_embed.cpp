#include "dvpe/pos_embed.hpp"

#include <stdexcept>

namespace dvpe {

num::Tensor<double> VirtualCoords::padded_queries() const {
  num::Tensor<double> flat({query_points.size(), 3});
  for (std::size_t i = 0; i < query_points.size(); ++i)
    for (int c = 0; c < 3; ++c) flat.at(i, static_cast<std::size_t>(c)) = query_points[i][c];
  return gather_pad(flat, query_part, 0.0);
}

VirtualCoords to_virtual(const ViewPartition& query_part, std::span<const Vec3> ref_points,
                         const ViewPartition& token_part, const RayGrid& rays) {
  if (query_part.items() != ref_points.size())
    throw std::invalid_argument("to_virtual: query partition does not match reference point count");
  if (token_part.items() != rays.tokens())
    throw std::invalid_argument("to_virtual: token partition does not match ray count");
  if (query_part.views != token_part.views)
    throw std::invalid_argument("to_virtual: query and token partitions use different view counts");
  VirtualCoords vc;
  vc.query_part = query_part;
  vc.token_part = token_part;
  vc.depth_bins = rays.depth_bins;
  vc.query_points.reserve(ref_points.size());
  for (std::size_t i = 0; i < ref_points.size(); ++i) {
    const auto r = make_rotation_z(query_part.theta[static_cast<std::size_t>(query_part.group[i])]);
    vc.query_points.push_back(r * ref_points[i]);
  }
  vc.ray_points.reserve(rays.points.size());
  for (std::size_t t = 0; t < rays.tokens(); ++t) {
    const auto r = make_rotation_z(token_part.theta[static_cast<std::size_t>(token_part.group[t])]);
    for (std::size_t d = 0; d < rays.depth_bins; ++d) vc.ray_points.push_back(r * rays.point(t, d));
  }
  return vc;
}

template <typename T>
DvpeParams<T> DvpeParams<T>::create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                    std::size_t depth_bins, int num_freqs, std::size_t hidden, num::Rng& rng,
                                    double max_freq, PerceptionRange range, int key_freqs) {
  DvpeParams p;
  p.num_freqs = num_freqs;
  p.key_freqs = key_freqs;
  p.max_freq = max_freq;
  p.dim = dim;
  p.range = range;
  const std::size_t sincos_dim = 3 * 2 * static_cast<std::size_t>(num_freqs);
  p.psi = num::Mlp<T>::create(store, prefix + ".psi", {sincos_dim, hidden, dim}, num::Activation::Gelu, rng);
  const std::size_t key_in = depth_bins * 3 * (key_freqs > 0 ? 2 * static_cast<std::size_t>(key_freqs) : 1);
  p.xi = num::Mlp<T>::create(store, prefix + ".xi", {key_in, hidden, dim}, num::Activation::Gelu, rng);
  return p;
}

template <typename T>
num::Var<T> encode_points(num::Tape<T>& tape, const num::Mlp<T>& mlp, num::Var<T> points, int num_freqs,
                          double max_freq, const PerceptionRange& range) {
  if (points.cols() != 3) throw std::invalid_argument("encode_points: expected [n x 3] points");
  const T sxy = static_cast<T>(kTwoPi / (2.0 * range.xy));
  const T sz = static_cast<T>(kTwoPi / (range.z_max - range.z_min));
  const T scale[3] = {sxy, sxy, sz};
  const T shift[3] = {static_cast<T>(range.xy) * sxy, static_cast<T>(range.xy) * sxy,
                      static_cast<T>(-range.z_min) * sz};
  auto normalized = num::affine_cols<T>(points, scale, shift);
  return num::mlp_apply(tape, mlp, num::sincos_encode(normalized, num_freqs, max_freq));
}

template <typename T>
num::Var<T> encode_query_pe(num::Tape<T>& tape, const DvpeParams<T>& params, num::Var<T> virtual_points,
                            const ViewPartition& part) {
  if (virtual_points.rows() != part.items())
    throw std::invalid_argument("encode_query_pe: point count does not match the partition");
  auto pe = encode_points(tape, params.psi, virtual_points, params.num_freqs, params.max_freq, params.range);
  const auto idx = part.slot_items();
  return num::gather_rows(pe, idx, T{0});
}

template <typename T>
num::Var<T> encode_query_pe(num::Tape<T>& tape, const DvpeParams<T>& params, const VirtualCoords& vc) {
  num::Tensor<T> pts({vc.query_points.size(), 3});
  for (std::size_t i = 0; i < vc.query_points.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) pts.at(i, c) = static_cast<T>(vc.query_points[i][static_cast<int>(c)]);
  return encode_query_pe(tape, params, tape.constant(std::move(pts)), vc.query_part);
}

template <typename T>
num::Tensor<T> ray_features(std::span<const Vec3> ray_points, std::size_t depth_bins, const PerceptionRange& range) {
  if (depth_bins == 0 || ray_points.size() % depth_bins != 0)
    throw std::invalid_argument("ray_features: ray point count is not a multiple of the depth bins");
  const std::size_t n = ray_points.size() / depth_bins;
  num::Tensor<T> out({n, depth_bins * 3});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t d = 0; d < depth_bins; ++d) {
      const Vec3 q = range.normalize(ray_points[t * depth_bins + d]);
      for (std::size_t c = 0; c < 3; ++c) out.at(t, d * 3 + c) = static_cast<T>(q[static_cast<int>(c)]);
    }
  return out;
}

template <typename T>
num::Var<T> encode_key_pe(num::Tape<T>& tape, const DvpeParams<T>& params, const VirtualCoords& vc) {
  auto feats = tape.constant(ray_features<T>(vc.ray_points, vc.depth_bins, params.range));
  if (params.key_freqs > 0)
    feats = num::sincos_encode(num::scale(feats, static_cast<T>(kTwoPi)), params.key_freqs, params.max_freq);
  auto pe = num::mlp_apply(tape, params.xi, feats);
  const auto idx = vc.token_part.slot_items();
  return num::gather_rows(pe, idx, T{0});
}

#define DVPE_INSTANTIATE(T)                                                                                     \
  template struct DvpeParams<T>;                                                                                \
  template num::Var<T> encode_points(num::Tape<T>&, const num::Mlp<T>&, num::Var<T>, int, double,                 \
                                     const PerceptionRange&);                                                   \
  template num::Var<T> encode_query_pe(num::Tape<T>&, const DvpeParams<T>&, num::Var<T>, const ViewPartition&); \
  template num::Var<T> encode_query_pe(num::Tape<T>&, const DvpeParams<T>&, const VirtualCoords&);              \
  template num::Var<T> encode_key_pe(num::Tape<T>&, const DvpeParams<T>&, const VirtualCoords&);                \
  template num::Tensor<T> ray_features(std::span<const Vec3>, std::size_t, const PerceptionRange&);

DVPE_INSTANTIATE(float)
DVPE_INSTANTIATE(double)

}  // namespace dvpe
