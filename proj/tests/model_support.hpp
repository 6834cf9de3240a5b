#pragma once

#include "dvpe/assign.hpp"
#include "dvpe/model.hpp"
#include "dvpe/sim.hpp"

#include <random>

namespace dvpe::testing {

/// One camera looking along +x with `w` x `h` tokens.
inline CameraModel forward_camera(int w, int h, int depth_bins, double yaw = 0.0) {
  CameraModel c;
  c.feat_w = w;
  c.feat_h = h;
  c.intr = {w / (2.0 * std::tan(0.7)), w / (2.0 * std::tan(0.7)), w / 2.0, h / 2.0};
  c.depths = linear_depth_bins(depth_bins, 2.0, 30.0);
  c.world_to_cam = (HomMat4::rotation_z(yaw) * HomMat4::translation(Vec3(0.5, 0.0, 1.5))).inverse();
  return c;
}

/// Hand-built single-frame scene with boxes ahead of the ego.
inline Scene tiny_scene(std::vector<CameraModel> rig, int classes) {
  Scene s;
  s.rig = std::move(rig);
  SceneFrame f;
  f.timestamp = 0.0;
  for (int i = 0; i < 2; ++i) {
    WorldBox b;
    b.center = Vec3(10.0 + 4 * i, -2.0 + 3 * i, 0.5);
    b.size = class_prior_size(i % classes);
    b.yaw = 0.3 - i;
    b.velocity = {0.5, -0.2 * i};
    b.label = i % classes;
    b.score = 1.0;
    f.boxes.push_back(b);
  }
  s.frames.push_back(f);
  return s;
}

inline SimConfig sim_for(const Scene& s, int classes) {
  SimConfig c;
  c.cameras = static_cast<int>(s.rig.size());
  c.feat_w = s.rig[0].feat_w;
  c.feat_h = s.rig[0].feat_h;
  c.depth_bins = static_cast<int>(s.rig[0].depths.size());
  c.classes = classes;
  c.noise = 0.0;
  c.proposal_jitter = 0.0;
  c.proposal_noise = 0.0;
  c.class_confusion = 0.0;
  return c;
}

inline ModelConfig model_for(const SimConfig& sim, std::size_t dim, std::size_t queries, int views) {
  ModelConfig m;
  m.dim = dim;
  m.heads = 2;
  m.layers = 2;
  m.queries = queries;
  m.views = views;
  m.classes = static_cast<std::size_t>(sim.classes);
  m.feat_dim = signature_dim(sim.classes);
  m.roi_dim = roi_feature_dim(sim.classes);
  m.depth_bins = static_cast<std::size_t>(sim.depth_bins);
  m.num_freqs = 4;
  m.pe_hidden = m.ffn_hidden = m.head_hidden = 2 * dim;
  return m;
}

/// Same frame with the rig rotated by `phi` about the ego z-axis.
template <typename T>
FrameInput<T> rotate_frame(const FrameInput<T>& in, double phi) {
  FrameInput<T> out = in;
  for (auto& c : out.rig) c.world_to_cam = c.world_to_cam * HomMat4::rotation_z(-phi);
  out.rays = discretize_rig(out.rig);
  for (auto& p : out.proposals) p.camera.world_to_cam = p.camera.world_to_cam * HomMat4::rotation_z(-phi);
  return out;
}

/// Rotates every reference point parameter by `phi`.
template <typename T>
void rotate_reference_points(ModelParams<T>& p, double phi) {
  const auto r = make_rotation_z(phi);
  for (auto* rp : p.ref_points)
    for (std::size_t i = 0; i < rp->value.rows(); ++i) {
      const Vec3 q = r * Vec3(rp->value.at(i, 0), rp->value.at(i, 1), rp->value.at(i, 2));
      for (int c = 0; c < 3; ++c) rp->value.at(i, static_cast<std::size_t>(c)) = static_cast<T>(q[c]);
    }
}

/// Worst deviation between rotated predictions and predictions of the
/// rotated input, over centers, yaw and velocity of every layer.
template <typename T>
double equivariance_error(const ModelConfig& cfg, const FrameInput<T>& in, int j, std::uint64_t seed) {
  const double phi = kTwoPi * j / cfg.views;
  auto a = ModelParams<T>::create(cfg, seed);
  auto b = ModelParams<T>::create(cfg, seed);
  rotate_reference_points(*b, phi);
  const auto rin = rotate_frame(in, phi);
  num::Tape<T> ta, tb;
  ForwardOptions fo;
  fo.training = false;
  const auto oa = decoder_forward(ta, *a, in, fo);
  const auto ob = decoder_forward(tb, *b, rin, fo);
  const auto r = make_rotation_z(phi);
  double worst = 0.0;
  for (std::size_t l = 0; l < oa.layers.size(); ++l) {
    const auto ba = decode_boxes(oa.layers[l], cfg.queries);
    const auto bb = decode_boxes(ob.layers[l], cfg.queries);
    for (std::size_t i = 0; i < ba.size(); ++i) {
      worst = std::max(worst, (r * ba[i].center - bb[i].center).norm());
      worst = std::max(worst, std::abs(wrap_angle(ba[i].yaw + phi - bb[i].yaw)));
      worst = std::max(worst, (r.matrix().topLeftCorner<2, 2>() * ba[i].velocity - bb[i].velocity).norm());
      for (std::size_t k = 0; k < ba[i].logits.size(); ++k)
        worst = std::max(worst, std::abs(ba[i].logits[k] - bb[i].logits[k]));
    }
  }
  return worst;
}

}  // namespace dvpe::testing
