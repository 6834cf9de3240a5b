#include "dvpe/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace dvpe {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) throw std::invalid_argument("ModelConfig: dim must be divisible by heads");
  if (layers <= 0 || queries == 0 || views <= 0 || depth_bins == 0 || classes == 0 || feat_dim == 0 || roi_dim == 0)
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  if (extra_groups < 0 || (extra_groups > 0 && group_queries == 0))
    throw std::invalid_argument("ModelConfig: additional groups need queries");
  if (!(cylinder_radius > 0.0) || !(z_max > z_min)) throw std::invalid_argument("ModelConfig: bad cylinder");
  if (num_freqs < 1) throw std::invalid_argument("ModelConfig: num_freqs must be >= 1");
  if (key_freqs < 0) throw std::invalid_argument("ModelConfig: key_freqs must be >= 0");
}

std::vector<Vec3> init_reference_points(std::size_t count, double radius, double z_min, double z_max, num::Rng& rng) {
  if (!(radius > 0.0)) throw std::invalid_argument("init_reference_points: radius must be positive");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> uz(z_min, z_max);
  std::vector<Vec3> pts;
  pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double a = kTwoPi * u01(rng);
    const double r = radius * std::sqrt(u01(rng));
    pts.emplace_back(r * std::cos(a), r * std::sin(a), uz(rng));
  }
  return pts;
}

WorldBox local_to_world(const LocalBox& box, const Vec3& ref_point, double theta_v) {
  const auto r = make_rotation_z(-theta_v);
  WorldBox w;
  w.center = ref_point + r * box.center_offset;
  w.size = box.log_size.array().exp();
  w.yaw = wrap_angle(box.yaw - theta_v);
  w.velocity = r.matrix().topLeftCorner<2, 2>() * box.velocity;
  w.logits = box.logits;
  w.score = 0.0;
  for (std::size_t k = 0; k < box.logits.size(); ++k) {
    const double p = sigmoid(box.logits[k]);
    if (k == 0 || p > w.score) {
      w.score = p;
      w.label = static_cast<int>(k);
    }
  }
  return w;
}

LocalBox world_to_local(const WorldBox& box, const Vec3& ref_point, double theta_v) {
  const auto r = make_rotation_z(theta_v);
  LocalBox l;
  l.center_offset = r * (box.center - ref_point);
  l.log_size = box.size.array().log();
  l.yaw = wrap_angle(box.yaw + theta_v);
  l.velocity = r.matrix().topLeftCorner<2, 2>() * box.velocity;
  l.logits = box.logits;
  return l;
}

template <typename T>
std::unique_ptr<ModelParams<T>> ModelParams<T>::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto p = std::make_unique<ModelParams<T>>();
  p->cfg = cfg;
  num::Rng rng(seed);
  auto& s = p->store;
  const std::size_t C = cfg.dim;
  p->feat_w = &s.uniform("input.proj.w", {cfg.feat_dim, C}, cfg.feat_dim, rng);
  p->feat_b = &s.filled("input.proj.b", {C}, T(0));
  for (int g = 0; g <= cfg.extra_groups; ++g) {
    const std::size_t n = g == 0 ? cfg.queries : cfg.group_queries;
    const std::string name = "queries.g" + std::to_string(g);
    p->query_embed.push_back(&s.uniform(name + ".embed", {n, C}, C, rng));
    const auto pts = init_reference_points(n, cfg.cylinder_radius, cfg.z_min, cfg.z_max, rng);
    num::Tensor<T> t({n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = static_cast<T>(pts[i][static_cast<int>(c)]);
    p->ref_points.push_back(&s.adopt(name + ".ref", std::move(t)));
  }
  p->pe = DvpeParams<T>::create(s, "pe", C, cfg.depth_bins, cfg.num_freqs, cfg.pe_hidden, rng, cfg.max_freq, cfg.range,
                                cfg.key_freqs);
  p->global_psi = num::Mlp<T>::create(s, "temporal_pe", {6 * static_cast<std::size_t>(cfg.num_freqs), cfg.pe_hidden, C},
                                      num::Activation::Gelu, rng);
  p->roi = RoiEncoder<T>::create(s, "roi", cfg.roi_dim, cfg.classes, C, cfg.pe_hidden, C, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    LayerParams<T> lp;
    lp.temporal = AttnBlock<T>::create(s, base + ".temporal", C, cfg.heads, rng);
    lp.cross = AttnBlock<T>::create(s, base + ".cross", C, cfg.heads, rng);
    lp.ffn_norm = num::LayerNormParams<T>::create(s, base + ".ffn.norm", C);
    lp.ffn = num::Mlp<T>::create(s, base + ".ffn", {C, cfg.ffn_hidden, C}, num::Activation::Gelu, rng);
    p->layers.push_back(std::move(lp));
  }
  p->head.norm = num::LayerNormParams<T>::create(s, "head.norm", C);
  p->head.reg = num::Mlp<T>::create(s, "head.reg", {C, cfg.head_hidden, kRegDim}, num::Activation::Gelu, rng);
  p->head.cls = num::Mlp<T>::create(s, "head.cls", {C, cfg.head_hidden, cfg.classes}, num::Activation::Gelu, rng);
  // Prior foreground probability of 0.01.
  for (auto& b : p->head.cls.biases.back()->value.data) b = static_cast<T>(-std::log(99.0));
  return p;
}

namespace {

template <typename T>
num::Tensor<T> rows_to_tensor(std::span<const Vec3> pts) {
  num::Tensor<T> t({pts.size(), 3});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = static_cast<T>(pts[i][static_cast<int>(c)]);
  return t;
}

template <typename T>
struct MemoryKeys {
  num::Var<T> emb;
  num::Var<T> pe;
  std::size_t count = 0;
};

template <typename T>
MemoryKeys<T> memory_keys(num::Tape<T>& tape, const ModelParams<T>& p, const MemoryView& view) {
  MemoryKeys<T> out;
  if (view.empty()) return out;
  const std::size_t C = p.cfg.dim;
  std::vector<const CompensatedEntry*> dec, roi;
  for (const auto& e : view.entries) (e.kind == EntryKind::Decoder ? dec : roi).push_back(&e);
  std::vector<num::Var<T>> embs, pts;
  MemoryView ordered;
  if (!dec.empty()) {
    num::Tensor<T> emb({dec.size(), C});
    std::vector<Vec3> pt;
    for (std::size_t i = 0; i < dec.size(); ++i) {
      if (dec[i]->embedding->size() != C) throw std::invalid_argument("memory entry width does not match the model");
      for (std::size_t c = 0; c < C; ++c) emb.at(i, c) = static_cast<T>((*dec[i]->embedding)[c]);
      pt.push_back(dec[i]->point);
      ordered.entries.push_back(*dec[i]);
    }
    embs.push_back(tape.constant(std::move(emb)));
    pts.push_back(tape.constant(rows_to_tensor<T>(pt)));
  }
  if (!roi.empty()) {
    std::vector<RoiInput> inputs;
    std::vector<HomMat4> rel;
    for (const auto* e : roi) {
      inputs.push_back(*e->roi);
      rel.push_back(e->relative);
      ordered.entries.push_back(*e);
    }
    auto enc = encode_roi(tape, p.roi, inputs);
    embs.push_back(enc.embedding);
    pts.push_back(transform_points(enc.point, rel));
  }
  out.count = ordered.size();
  out.emb = embs.size() == 1 ? embs[0] : num::concat_rows(embs);
  auto points = pts.size() == 1 ? pts[0] : num::concat_rows(pts);
  auto pos = encode_points(tape, p.global_psi, points, p.cfg.num_freqs, p.cfg.max_freq, p.cfg.range);
  auto motion = num::mlp_apply(tape, p.roi.motion, tape.constant(ordered.motion_features<T>()));
  out.pe = num::add(pos, motion);
  return out;
}

}  // namespace

template <typename T>
DecoderOutput<T> decoder_forward(num::Tape<T>& tape, const ModelParams<T>& p, const FrameInput<T>& frame,
                                 const ForwardOptions& opts) {
  const auto& cfg = p.cfg;
  if (frame.features.rows() != frame.rays.tokens() || frame.features.cols() != cfg.feat_dim)
    throw std::invalid_argument("decoder_forward: features do not match the ray grid");
  if (frame.rays.depth_bins != cfg.depth_bins) throw std::invalid_argument("decoder_forward: depth bin mismatch");

  DecoderOutput<T> out;
  const int groups = opts.training ? cfg.extra_groups + 1 : 1;
  std::vector<num::Var<T>> embeds, refs;
  for (int g = 0; g < groups; ++g) {
    if (g > 0) ++p.extra_group_reads;
    embeds.push_back(tape.param(*p.query_embed[static_cast<std::size_t>(g)]));
    refs.push_back(tape.param(*p.ref_points[static_cast<std::size_t>(g)]));
    out.query_group.insert(out.query_group.end(), embeds.back().rows(), g);
  }
  auto x = groups == 1 ? embeds[0] : num::concat_rows(embeds);
  auto ref = groups == 1 ? refs[0] : num::concat_rows(refs);
  const std::size_t M = x.rows();
  std::vector<Vec3> ref_vals(M);
  for (std::size_t i = 0; i < M; ++i)
    ref_vals[i] = Vec3(ref.value().at(i, 0), ref.value().at(i, 1), ref.value().at(i, 2));

  auto feats = num::linear(tape.constant(frame.features), tape.param(*p.feat_w), tape.param(*p.feat_b));

  num::Var<T> q_world_pe;
  MemoryKeys<T> mem;
  if (cfg.temporal) {
    q_world_pe = encode_points(tape, p.global_psi, ref, cfg.num_freqs, cfg.max_freq, cfg.range);
    if (cfg.memory && opts.memory != nullptr && opts.memory->size() > 0)
      mem = memory_keys(tape, p, ego_compensate(*opts.memory, frame.world_to_ego, frame.timestamp));
  }
  out.memory_entries = mem.count;

  PartitionConfig pcfg{cfg.dvpe ? cfg.views : 1, cfg.theta_s, cfg.shift_step};
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& L = p.layers[static_cast<std::size_t>(l)];
    if (cfg.temporal) x = temporal_attention(tape, L.temporal, x, q_world_pe, mem.emb, mem.pe, out.query_group);

    const double theta_s = cfg.dvpe ? shift_schedule(l, pcfg) : 0.0;
    auto qpart = partition_points(ref_vals, pcfg.views, theta_s);
    auto kpart = partition_points(frame.rays.furthest, pcfg.views, theta_s);
    if (!cfg.dvpe) {
      qpart.theta.assign(qpart.theta.size(), 0.0);
      kpart.theta.assign(kpart.theta.size(), 0.0);
    }
    std::vector<double> angles(M), neg(M);
    for (std::size_t i = 0; i < M; ++i) {
      angles[i] = qpart.theta[static_cast<std::size_t>(qpart.group[i])];
      neg[i] = -angles[i];
    }
    auto q_pe = encode_query_pe(tape, p.pe, num::rotate_z(ref, angles), qpart);
    const auto vc = to_virtual(qpart, ref_vals, kpart, frame.rays);
    num::Var<T> k_pe;
    if (opts.key_cache != nullptr) {
      for (const auto& e : opts.key_cache->entries)
        if (e.tape == &tape && e.layer == l && e.points == frame.rays.points) k_pe = num::Var<T>{&tape, e.id};
    }
    if (!k_pe.valid()) {
      k_pe = encode_key_pe(tape, p.pe, vc);
      if (opts.key_cache != nullptr) opts.key_cache->entries.push_back({&tape, l, k_pe.id, frame.rays.points});
    }

    std::vector<T> probs;
    const bool traced = opts.trace != nullptr && opts.trace->layer == l;
    x = visibility_cross_attention(tape, L.cross, x, feats, qpart, kpart, q_pe, k_pe, T{0}, nullptr,
                                   traced ? &probs : nullptr);
    if (traced) {
      opts.trace->probs.assign(probs.begin(), probs.end());
      opts.trace->query_part = qpart;
      opts.trace->token_part = kpart;
    }
    x = num::add(x, num::mlp_apply(tape, L.ffn, num::layernorm_apply(tape, L.ffn_norm, x)));

    auto h = num::layernorm_apply(tape, p.head.norm, x);
    if (cfg.head_pe) h = num::add(h, num::gather_rows(q_pe, qpart.item_slots(), T{0}));
    LayerOutput<T> lo;
    lo.reg = num::mlp_apply(tape, p.head.reg, h);
    lo.logits = num::mlp_apply(tape, p.head.cls, h);
    lo.center = num::add(ref, num::rotate_z(num::slice_cols(lo.reg, kRegCenter, kRegCenter + 3), neg));
    lo.theta = std::move(angles);
    lo.query_part = std::move(qpart);
    out.layers.push_back(std::move(lo));
  }
  out.embeddings = num::layernorm_apply(tape, p.head.norm, x);
  return out;
}

template <typename T>
std::vector<WorldBox> decode_boxes(const LayerOutput<T>& layer, std::size_t count) {
  const auto& reg = layer.reg.value();
  const auto& logits = layer.logits.value();
  const auto& center = layer.center.value();
  count = std::min(count, reg.rows());
  std::vector<WorldBox> boxes;
  boxes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    LocalBox lb;
    for (int c = 0; c < 3; ++c) lb.log_size[c] = static_cast<double>(reg.at(i, kRegLogSize + static_cast<std::size_t>(c)));
    lb.yaw = std::atan2(static_cast<double>(reg.at(i, kRegYaw)), static_cast<double>(reg.at(i, kRegYaw + 1)));
    lb.velocity = {static_cast<double>(reg.at(i, kRegVel)), static_cast<double>(reg.at(i, kRegVel + 1))};
    lb.logits.assign(logits.row(i), logits.row(i) + logits.cols());
    WorldBox w = local_to_world(lb, Vec3::Zero(), layer.theta[i]);
    w.center = Vec3(center.at(i, 0), center.at(i, 1), center.at(i, 2));
    boxes.push_back(std::move(w));
  }
  return boxes;
}

template <typename T>
void push_memory(MemoryQueue& queue, const ModelParams<T>& params, const DecoderOutput<T>& out,
                 const FrameInput<T>& frame) {
  const auto boxes = decode_boxes(out.layers.back(), params.cfg.queries);
  const auto& emb = out.embeddings.value();
  std::vector<MemoryEntry> dec;
  dec.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    MemoryEntry e;
    e.kind = EntryKind::Decoder;
    e.embedding.assign(emb.row(i), emb.row(i) + emb.cols());
    e.point = boxes[i].center;
    e.score = boxes[i].score;
    dec.push_back(std::move(e));
  }
  std::vector<MemoryEntry> roi;
  if (!frame.proposals.empty()) {
    num::Tape<T> tape;
    tape.set_grad_enabled(false);
    auto enc = encode_roi(tape, params.roi, frame.proposals);
    for (std::size_t i = 0; i < frame.proposals.size(); ++i) {
      MemoryEntry e;
      e.kind = EntryKind::Roi;
      const auto& ev = enc.embedding.value();
      e.embedding.assign(ev.row(i), ev.row(i) + ev.cols());
      const auto& pv = enc.point.value();
      e.point = Vec3(pv.at(i, 0), pv.at(i, 1), pv.at(i, 2));
      double best = 0.0;
      for (double s : frame.proposals[i].class_scores) best = std::max(best, s);
      e.score = best;
      e.roi = frame.proposals[i];
      roi.push_back(std::move(e));
    }
  }
  queue.push_frame(std::move(dec), std::move(roi), frame.world_to_ego, frame.timestamp);
}

#define DVPE_INSTANTIATE(T)                                                                                 \
  template struct ModelParams<T>;                                                                           \
  template DecoderOutput<T> decoder_forward(num::Tape<T>&, const ModelParams<T>&, const FrameInput<T>&,     \
                                            const ForwardOptions&);                                         \
  template std::vector<WorldBox> decode_boxes(const LayerOutput<T>&, std::size_t);                          \
  template void push_memory(MemoryQueue&, const ModelParams<T>&, const DecoderOutput<T>&, const FrameInput<T>&);

DVPE_INSTANTIATE(float)
DVPE_INSTANTIATE(double)

}  // namespace dvpe
