#include "dvpe/memory.hpp"

#include "dvpe/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dvpe {

std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

std::array<double, 4> RoiCamera::normalized_intrinsics() const {
  return {intr.fx / feat_w, intr.fy / feat_h, intr.cx / feat_w, intr.cy / feat_h};
}

namespace {

std::vector<MemoryEntry> keep_top(std::vector<MemoryEntry> entries, std::size_t k) {
  if (entries.size() <= k) return entries;
  std::vector<double> scores;
  scores.reserve(entries.size());
  for (const auto& e : entries) scores.push_back(e.score);
  std::vector<MemoryEntry> out;
  out.reserve(k);
  for (std::size_t i : topk_select(scores, k)) out.push_back(std::move(entries[i]));
  return out;
}

}  // namespace

void MemoryQueue::push_frame(std::vector<MemoryEntry> decoder, std::vector<MemoryEntry> roi,
                             const HomMat4& world_to_ego, double timestamp) {
  if (!frames_.empty() && !(timestamp > frames_.back().timestamp))
    throw std::invalid_argument("MemoryQueue::push_frame: timestamps must increase");
  if (cfg_.frames == 0) return;
  FrameMemory f;
  f.timestamp = timestamp;
  f.world_to_ego = world_to_ego;
  for (auto& e : keep_top(std::move(decoder), cfg_.decoder_topk)) {
    e.kind = EntryKind::Decoder;
    f.entries.push_back(std::move(e));
  }
  for (auto& e : keep_top(std::move(roi), cfg_.roi_topk)) {
    e.kind = EntryKind::Roi;
    if (!e.roi) throw std::invalid_argument("MemoryQueue::push_frame: RoI entry without raw inputs");
    f.entries.push_back(std::move(e));
  }
  for (const auto& e : f.entries)
    if (!e.point.allFinite()) throw std::invalid_argument("MemoryQueue::push_frame: non-finite point");
  frames_.push_back(std::move(f));
  while (frames_.size() > cfg_.frames) frames_.pop_front();
}

std::size_t MemoryQueue::entry_count() const {
  std::size_t n = 0;
  for (const auto& f : frames_) n += f.entries.size();
  return n;
}

template <typename T>
num::Tensor<T> MemoryView::motion_features() const {
  num::Tensor<T> out({entries.size(), 13});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& m = entries[i].relative.matrix();
    out.at(i, 0) = static_cast<T>(entries[i].dt);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) out.at(i, 1 + static_cast<std::size_t>(r * 4 + c)) = static_cast<T>(m(r, c));
  }
  return out;
}

HomMat4 relative_ego(const HomMat4& world_to_ego_now, const HomMat4& world_to_ego_src) {
  for (const HomMat4* h : {&world_to_ego_now, &world_to_ego_src}) {
    const double det = h->rotation().determinant();
    if (!h->matrix().allFinite() || std::abs(det) < 1e-12) throw std::invalid_argument("relative_ego: singular ego transform");
  }
  return world_to_ego_now * world_to_ego_src.inverse();
}

MemoryView ego_compensate(const MemoryQueue& queue, const HomMat4& world_to_ego_now, double timestamp_now) {
  MemoryView view;
  view.entries.reserve(queue.entry_count());
  // Newest frame first.
  for (auto it = queue.frames().rbegin(); it != queue.frames().rend(); ++it) {
    if (it->timestamp > timestamp_now) throw std::invalid_argument("ego_compensate: memory entry from the future");
    const HomMat4 rel = relative_ego(world_to_ego_now, it->world_to_ego);
    for (const auto& e : it->entries) {
      CompensatedEntry c;
      c.kind = e.kind;
      c.embedding = &e.embedding;
      c.roi = e.roi ? &*e.roi : nullptr;
      c.point = apply_homogeneous(rel, e.point);
      c.dt = timestamp_now - it->timestamp;
      c.relative = rel;
      view.entries.push_back(c);
    }
  }
  return view;
}

template <typename T>
RoiEncoder<T> RoiEncoder<T>::create(num::ParamStore<T>& store, const std::string& prefix, std::size_t roi_dim,
                                    std::size_t classes, std::size_t proj_dim, std::size_t hidden, std::size_t dim,
                                    num::Rng& rng, double depth_init) {
  RoiEncoder e;
  e.proj_w = &store.uniform(prefix + ".proj.w", {roi_dim, proj_dim}, roi_dim, rng);
  e.proj_b = &store.filled(prefix + ".proj.b", {proj_dim}, T(0));
  e.embed = num::Mlp<T>::create(store, prefix + ".embed", {proj_dim + classes, hidden, dim}, num::Activation::Gelu, rng);
  e.point = num::Mlp<T>::create(store, prefix + ".point", {proj_dim + 4, hidden, 3}, num::Activation::Gelu, rng);
  auto& b = e.point.biases.back()->value.data;
  b[0] = T(0.5);
  b[1] = T(0.5);
  b[2] = static_cast<T>(depth_init);
  e.motion = num::Mlp<T>::create(store, prefix + ".motion", {13, hidden, dim}, num::Activation::Gelu, rng);
  return e;
}

template <typename T>
num::Var<T> roi_unproject(num::Var<T> raw, std::span<const RoiCamera> cams) {
  if (!raw.valid() || raw.cols() != 3 || raw.rows() != cams.size())
    throw std::invalid_argument("roi_unproject: expected one [u, v, depth] row per camera");
  const std::size_t n = raw.rows();
  const auto& x = raw.value();
  num::Tensor<T> out({n, 3});
  std::vector<double> jac(n * 9, 0.0);  // d out / d raw, row-major 3x3 per row
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = cams[i];
    const double u = static_cast<double>(x.at(i, 0)) * c.feat_w;
    const double v = static_cast<double>(x.at(i, 1)) * c.feat_h;
    double d = static_cast<double>(x.at(i, 2));
    const bool clamp = !(d > kRoiDepthFloor);
    if (clamp) {
      d = kRoiDepthFloor;
      ++clamped;
    }
    const Vec3 pc(d, -d * (u - c.intr.cx) / c.intr.fx, -d * (v - c.intr.cy) / c.intr.fy);
    const Mat3 rt = c.world_to_cam.rotation().transpose();
    const Vec3 p = rt * (pc - c.world_to_cam.translation());
    Mat3 dpc = Mat3::Zero();  // columns: d/d raw0, raw1, raw2
    dpc(1, 0) = -d * c.feat_w / c.intr.fx;
    dpc(2, 1) = -d * c.feat_h / c.intr.fy;
    if (!clamp) dpc.col(2) = Vec3(1.0, -(u - c.intr.cx) / c.intr.fx, -(v - c.intr.cy) / c.intr.fy);
    const Mat3 j = rt * dpc;
    for (int r = 0; r < 3; ++r) {
      out.at(i, static_cast<std::size_t>(r)) = static_cast<T>(p[r]);
      for (int k = 0; k < 3; ++k) jac[i * 9 + static_cast<std::size_t>(r * 3 + k)] = j(r, k);
    }
  }
  if (clamped > 0) diagnostics().roi_depth_clamped += clamped;
  const int ir = raw.id;
  return raw.tape->record(
      std::move(out), "roi_unproject",
      [ir, jac = std::move(jac)](num::Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gr = t.grad(ir);
        const std::size_t rows = g.size() / 3;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t k = 0; k < 3; ++k) gr[i * 3 + k] += g[i * 3 + r] * static_cast<T>(jac[i * 9 + r * 3 + k]);
      },
      raw);
}

template <typename T>
num::Var<T> transform_points(num::Var<T> points, std::span<const HomMat4> transforms) {
  if (!points.valid() || points.cols() != 3 || points.rows() != transforms.size())
    throw std::invalid_argument("transform_points: expected one transform per [x, y, z] row");
  const std::size_t n = points.rows();
  num::Tensor<T> out({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p(points.value().at(i, 0), points.value().at(i, 1), points.value().at(i, 2));
    const Vec3 q = apply_homogeneous(transforms[i], p);
    for (int r = 0; r < 3; ++r) out.at(i, static_cast<std::size_t>(r)) = static_cast<T>(q[r]);
  }
  std::vector<Mat3> rots;
  rots.reserve(n);
  for (const auto& h : transforms) rots.push_back(h.rotation());
  const int ip = points.id;
  return points.tape->record(
      std::move(out), "transform_points",
      [ip, rots = std::move(rots)](num::Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gp = t.grad(ip);
        for (std::size_t i = 0; i < rots.size(); ++i)
          for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k)
              gp[i * 3 + static_cast<std::size_t>(k)] += g[i * 3 + static_cast<std::size_t>(r)] * static_cast<T>(rots[i](r, k));
      },
      points);
}

template <typename T>
RoiEncoding<T> encode_roi(num::Tape<T>& tape, const RoiEncoder<T>& enc, std::span<const RoiInput> rois) {
  if (rois.empty()) throw std::invalid_argument("encode_roi: no proposals");
  const std::size_t roi_dim = enc.proj_w->value.shape[0];
  const std::size_t classes = enc.embed.in_dim() - enc.proj_w->value.shape[1];
  num::Tensor<T> feats({rois.size(), roi_dim});
  num::Tensor<T> cls({rois.size(), classes});
  num::Tensor<T> intr({rois.size(), 4});
  std::vector<RoiCamera> cams;
  cams.reserve(rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& r = rois[i];
    if (r.feature.size() != roi_dim || r.class_scores.size() != classes)
      throw std::invalid_argument("encode_roi: proposal dimensions do not match the encoder");
    for (std::size_t c = 0; c < roi_dim; ++c) feats.at(i, c) = static_cast<T>(r.feature[c]);
    for (std::size_t c = 0; c < classes; ++c) cls.at(i, c) = static_cast<T>(r.class_scores[c]);
    const auto ni = r.camera.normalized_intrinsics();
    for (std::size_t c = 0; c < 4; ++c) intr.at(i, c) = static_cast<T>(ni[c]);
    cams.push_back(r.camera);
  }
  auto proj = num::linear(tape.constant(std::move(feats)), tape.param(*enc.proj_w), tape.param(*enc.proj_b));
  RoiEncoding<T> out;
  out.embedding = num::mlp_apply(tape, enc.embed, num::concat_cols<T>({proj, tape.constant(std::move(cls))}));
  auto raw = num::mlp_apply(tape, enc.point, num::concat_cols<T>({proj, tape.constant(std::move(intr))}));
  out.point = roi_unproject(raw, cams);
  return out;
}

#define DVPE_INSTANTIATE(T)                                                                                      \
  template num::Tensor<T> MemoryView::motion_features<T>() const;                                                \
  template struct RoiEncoder<T>;                                                                                 \
  template num::Var<T> roi_unproject(num::Var<T>, std::span<const RoiCamera>);                                   \
  template num::Var<T> transform_points(num::Var<T>, std::span<const HomMat4>);                                  \
  template RoiEncoding<T> encode_roi(num::Tape<T>&, const RoiEncoder<T>&, std::span<const RoiInput>);

DVPE_INSTANTIATE(float)
DVPE_INSTANTIATE(double)

}  // namespace dvpe
