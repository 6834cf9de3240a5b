#include "dvpe/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dvpe {

void SimConfig::validate() const {
  if (!(kernel_power > 0.0)) throw std::invalid_argument("SimConfig: kernel_power must be positive");
  if (cameras < 1 || feat_h < 1 || feat_w < 1 || depth_bins < 1 || classes < 1)
    throw std::invalid_argument("SimConfig: counts must be positive");
  if (!(hfov_deg > 0.0 && hfov_deg < 180.0) || !(vfov_deg > 0.0 && vfov_deg < 180.0))
    throw std::invalid_argument("SimConfig: field of view must be in (0, 180) degrees");
  if (min_boxes < 0 || max_boxes < min_boxes) throw std::invalid_argument("SimConfig: bad box count range");
  if (!(min_range > 0.0) || !(max_range >= min_range)) throw std::invalid_argument("SimConfig: bad range annulus");
  if (frames < 1 || !(frame_dt > 0.0)) throw std::invalid_argument("SimConfig: need at least one frame");
  if (noise < 0.0 || proposal_noise < 0.0 || proposal_jitter < 0.0) throw std::invalid_argument("SimConfig: negative noise");
}

Vec3 class_prior_size(int label) {
  switch (label % 3) {
    case 0: return {4.5, 1.9, 1.6};
    case 1: return {0.8, 0.8, 1.8};
    default: return {1.8, 0.7, 1.6};
  }
}

std::vector<CameraModel> default_rig(const SimConfig& cfg) {
  cfg.validate();
  std::vector<CameraModel> rig;
  const double fx = 0.5 * cfg.feat_w / std::tan(0.5 * cfg.hfov_deg * kPi / 180.0);
  const double fy = 0.5 * cfg.feat_h / std::tan(0.5 * cfg.vfov_deg * kPi / 180.0);
  for (int i = 0; i < cfg.cameras; ++i) {
    const double yaw = kTwoPi * i / cfg.cameras;
    CameraModel cam;
    cam.intr = {fx, fy, 0.5 * cfg.feat_w, 0.5 * cfg.feat_h};
    cam.feat_h = cfg.feat_h;
    cam.feat_w = cfg.feat_w;
    cam.depths = linear_depth_bins(cfg.depth_bins, cfg.depth_near, cfg.depth_far);
    const Vec3 pos(cfg.mount_radius * std::cos(yaw), cfg.mount_radius * std::sin(yaw), cfg.mount_height);
    const HomMat4 cam_to_ego = HomMat4::from_rotation_translation(make_rotation_z(yaw).matrix(), pos);
    cam.world_to_cam = cam_to_ego.inverse();
    rig.push_back(std::move(cam));
  }
  return rig;
}

std::size_t signature_dim(int classes) { return static_cast<std::size_t>(classes) + 10; }
std::size_t roi_feature_dim(int classes) { return static_cast<std::size_t>(classes) + 8; }

namespace {

double ego_yaw(const HomMat4& h) { return std::atan2(h.matrix()(1, 0), h.matrix()(0, 0)); }

WorldBox to_frame(const WorldBox& b, const HomMat4& world_to_frame) {
  WorldBox out = b;
  out.center = apply_homogeneous(world_to_frame, b.center);
  const double dy = ego_yaw(world_to_frame);
  out.yaw = wrap_angle(b.yaw + dy);
  out.velocity = make_rotation_z(dy).matrix().topLeftCorner<2, 2>() * b.velocity;
  return out;
}

bool center_visible(const CameraModel& cam, const Vec3& p) {
  const auto pr = project(cam, p);
  return pr && pr->depth > 0.1 && pr->u >= 0.0 && pr->u < cam.feat_w && pr->v >= 0.0 && pr->v < cam.feat_h;
}

std::vector<Vec3> box_corners(const WorldBox& b) {
  std::vector<Vec3> out;
  const auto r = make_rotation_z(b.yaw);
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) out.push_back(b.center + r * Vec3(0.5 * sx * b.size.x(), 0.5 * sy * b.size.y(), 0.5 * sz * b.size.z()));
  return out;
}

}  // namespace

std::vector<WorldBox> boxes_in_ego(const Scene& scene, std::size_t frame) {
  const auto& f = scene.frames.at(frame);
  const HomMat4 w2e = f.ego_to_world.inverse();
  std::vector<WorldBox> out;
  out.reserve(f.boxes.size());
  for (const auto& b : f.boxes) out.push_back(to_frame(b, w2e));
  return out;
}

Scene generate_scene(std::mt19937_64& rng, const SimConfig& cfg) {
  cfg.validate();
  Scene s;
  s.rig = default_rig(cfg);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Ego: constant speed and yaw rate; frame 0 ego coincides with the world.
  const double speed = cfg.ego_max_speed * u01(rng);
  const double yaw_rate = cfg.ego_max_yaw_rate * (2.0 * u01(rng) - 1.0);
  std::vector<HomMat4> poses;
  double yaw = 0.0;
  Vec3 pos = Vec3::Zero();
  for (int f = 0; f < cfg.frames; ++f) {
    poses.push_back(HomMat4::from_rotation_translation(make_rotation_z(yaw).matrix(), pos));
    pos += make_rotation_z(yaw) * Vec3(speed * cfg.frame_dt, 0.0, 0.0);
    yaw += yaw_rate * cfg.frame_dt;
  }

  std::uniform_int_distribution<int> count_dist(cfg.min_boxes, cfg.max_boxes);
  const int n = count_dist(rng);
  std::vector<WorldBox> boxes;
  int attempts = 0;
  while (static_cast<int>(boxes.size()) < n && attempts < 1000 * std::max(n, 1)) {
    ++attempts;
    WorldBox b;
    b.label = static_cast<int>(u01(rng) * cfg.classes) % cfg.classes;
    const Vec3 prior = class_prior_size(b.label);
    for (int c = 0; c < 3; ++c) b.size[c] = prior[c] * (0.9 + 0.2 * u01(rng));
    const double a = kTwoPi * u01(rng);
    const double r2 = cfg.min_range * cfg.min_range + (cfg.max_range * cfg.max_range - cfg.min_range * cfg.min_range) * u01(rng);
    const double r = std::sqrt(r2);
    b.center = Vec3(r * std::cos(a), r * std::sin(a), 0.5 * b.size.z());
    b.yaw = wrap_angle(kTwoPi * u01(rng) - kPi);
    const double v = cfg.max_speed * u01(rng);
    const double va = kTwoPi * u01(rng);
    b.velocity = Eigen::Vector2d(v * std::cos(va), v * std::sin(va));
    b.logits.clear();
    b.score = 1.0;

    bool ok = true;
    for (const auto& o : boxes)
      if ((o.center - b.center).head<2>().norm() < cfg.min_separation) ok = false;
    for (int f = 0; ok && f < cfg.frames; ++f) {
      WorldBox moved = b;
      moved.center.head<2>() += b.velocity * (f * cfg.frame_dt);
      const WorldBox local = to_frame(moved, poses[static_cast<std::size_t>(f)].inverse());
      const double range = local.center.head<2>().norm();
      if (range < cfg.min_range * 0.8 || range > cfg.max_range * 1.2) ok = false;
      bool seen = false;
      for (const auto& cam : s.rig) seen = seen || center_visible(cam, local.center);
      if (!seen) ok = false;
    }
    if (ok) boxes.push_back(b);
  }

  for (int f = 0; f < cfg.frames; ++f) {
    SceneFrame fr;
    fr.timestamp = f * cfg.frame_dt;
    fr.ego_to_world = poses[static_cast<std::size_t>(f)];
    for (const auto& b : boxes) {
      WorldBox moved = b;
      moved.center.head<2>() += b.velocity * (f * cfg.frame_dt);
      fr.boxes.push_back(moved);
    }
    s.frames.push_back(std::move(fr));
  }
  return s;
}

num::Tensor<double> render_features(const Scene& scene, std::size_t view, std::size_t frame, std::mt19937_64& rng,
                                    double noise, const SimConfig& cfg) {
  const auto& cam = scene.rig.at(view);
  const auto boxes = boxes_in_ego(scene, frame);
  const std::size_t K = static_cast<std::size_t>(cfg.classes);
  const std::size_t dim = signature_dim(cfg.classes);
  num::Tensor<double> out({cam.tokens(), dim});

  struct Seen {
    const WorldBox* box;
    Vec3 dir;
    double depth, sigma, yaw;
  };
  std::vector<Seen> seen;
  for (const auto& b : boxes) {
    const Vec3 p = apply_homogeneous(cam.world_to_cam, b.center);
    if (p.x() <= 0.1) continue;
    const double extent = std::atan(0.5 * std::max(b.size.x(), b.size.y()) / p.x());
    const double cam_yaw = ego_yaw(cam.world_to_cam);
    seen.push_back({&b, p, p.x(), std::max(cfg.kernel_floor, 0.5 * extent), wrap_angle(b.yaw + cam_yaw)});
  }

  for (std::size_t t = 0; t < cam.tokens(); ++t) {
    const auto [u, v] = cam.token_pixel(t);
    const Vec3 ray = unproject(cam.intr, u, v, 1.0);
    const double ray_h = std::atan2(ray.y(), ray.x());
    const double ray_v = std::atan2(ray.z(), ray.head<2>().norm());
    double* row = out.row(t);
    for (const auto& s : seen) {
      const double dh = wrap_angle(std::atan2(s.dir.y(), s.dir.x()) - ray_h);
      const double dv = std::atan2(s.dir.z(), s.dir.head<2>().norm()) - ray_v;
      const double d2 = dh * dh + dv * dv;
      if (d2 > 16.0 * s.sigma * s.sigma) continue;
      const double k = std::exp(-std::pow(0.5 * d2 / (s.sigma * s.sigma), cfg.kernel_power));
      const auto& b = *s.box;
      std::size_t c = 0;
      for (std::size_t j = 0; j < K; ++j) row[c++] += k * (static_cast<int>(j) == b.label ? 1.0 : 0.0);
      for (int j = 0; j < 3; ++j) row[c++] += k * std::log(b.size[j]);
      row[c++] += k * (std::log(std::max(b.size.x(), b.size.y()) / s.depth) + 2.0);
      row[c++] += k * std::log(s.depth / 10.0);
      row[c++] += k * dh / 0.1;
      row[c++] += k * dv / 0.1;
      const double rel = s.yaw - ray_h;
      row[c++] += k * std::sin(rel);
      row[c++] += k * std::cos(rel);
      row[c++] += k;
    }
  }
  if (noise > 0.0) {
    std::normal_distribution<double> nd(0.0, noise);
    for (auto& x : out.data) x += nd(rng);
  }
  return out;
}

std::vector<Proposal> oracle_2d_proposals(const Scene& scene, std::size_t view, std::size_t frame,
                                          std::mt19937_64& rng, const SimConfig& cfg) {
  const auto& cam = scene.rig.at(view);
  const auto boxes = boxes_in_ego(scene, frame);
  const int K = cfg.classes;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  RoiCamera rc{cam.intr, cam.feat_w, cam.feat_h, cam.world_to_cam};
  const double W = cam.feat_w, H = cam.feat_h;

  auto make = [&](double u0, double v0, double u1, double v1, int label, const Vec3& size, double depth, int gt) {
    Proposal p;
    p.u0 = u0;
    p.v0 = v0;
    p.u1 = u1;
    p.v1 = v1;
    p.gt_index = gt;
    p.roi.camera = rc;
    auto& f = p.roi.feature;
    for (int j = 0; j < K; ++j) f.push_back(j == label ? 1.0 : 0.0);
    for (int j = 0; j < 3; ++j) f.push_back(std::log(size[j]));
    f.push_back(0.5 * (u0 + u1) / W);
    f.push_back(0.5 * (v0 + v1) / H);
    f.push_back((u1 - u0) / W);
    f.push_back((v1 - v0) / H);
    f.push_back(std::log(depth / 10.0));
    if (cfg.proposal_noise > 0.0)
      for (auto& x : f) x += cfg.proposal_noise * n01(rng);
    p.roi.class_scores.assign(static_cast<std::size_t>(K), K > 1 ? cfg.class_confusion / (K - 1) : 0.0);
    p.roi.class_scores[static_cast<std::size_t>(label)] = K > 1 ? 1.0 - cfg.class_confusion : 1.0;
    return p;
  };

  std::vector<Proposal> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    if (!center_visible(cam, b.center)) continue;
    if (cfg.false_negative_rate > 0.0 && u01(rng) < cfg.false_negative_rate) continue;
    double u0 = W, v0 = H, u1 = 0.0, v1 = 0.0;
    for (const auto& c : box_corners(b)) {
      const auto pr = project(cam, c);
      if (!pr || pr->depth <= 0.1) continue;
      u0 = std::min(u0, pr->u);
      u1 = std::max(u1, pr->u);
      v0 = std::min(v0, pr->v);
      v1 = std::max(v1, pr->v);
    }
    u0 = std::clamp(u0, 0.0, W);
    u1 = std::clamp(u1, 0.0, W);
    v0 = std::clamp(v0, 0.0, H);
    v1 = std::clamp(v1, 0.0, H);
    if (cfg.proposal_jitter > 0.0) {
      const double bw = u1 - u0, bh = v1 - v0;
      u0 += cfg.proposal_jitter * bw * n01(rng);
      u1 += cfg.proposal_jitter * bw * n01(rng);
      v0 += cfg.proposal_jitter * bh * n01(rng);
      v1 += cfg.proposal_jitter * bh * n01(rng);
      if (u1 < u0) std::swap(u0, u1);
      if (v1 < v0) std::swap(v0, v1);
    }
    const double depth = apply_homogeneous(cam.world_to_cam, b.center).x();
    out.push_back(make(u0, v0, u1, v1, b.label, b.size, depth, static_cast<int>(i)));
    if (cfg.false_positive_rate > 0.0 && u01(rng) < cfg.false_positive_rate) {
      const double cu = W * u01(rng), cv = H * u01(rng), hw = 0.5 + 2.0 * u01(rng), hh = 0.5 + 2.0 * u01(rng);
      const int label = static_cast<int>(u01(rng) * K) % K;
      out.push_back(make(std::max(0.0, cu - hw), std::max(0.0, cv - hh), std::min(W, cu + hw), std::min(H, cv + hh),
                         label, class_prior_size(label), 5.0 + 25.0 * u01(rng), -1));
    }
  }
  return out;
}

template <typename T>
FrameInput<T> build_frame_input(const Scene& scene, std::size_t frame, std::mt19937_64& rng, const SimConfig& cfg,
                                bool with_proposals) {
  FrameInput<T> in;
  in.rig = scene.rig;
  in.rays = discretize_rig(scene.rig);
  const std::size_t dim = signature_dim(cfg.classes);
  in.features = num::Tensor<T>({in.rays.tokens(), dim});
  std::size_t row = 0;
  for (std::size_t v = 0; v < scene.rig.size(); ++v) {
    const auto f = render_features(scene, v, frame, rng, cfg.noise, cfg);
    for (std::size_t i = 0; i < f.size(); ++i) in.features.data[row * dim + i] = static_cast<T>(f.data[i]);
    row += f.rows();
  }
  if (with_proposals)
    for (std::size_t v = 0; v < scene.rig.size(); ++v)
      for (auto& p : oracle_2d_proposals(scene, v, frame, rng, cfg)) in.proposals.push_back(std::move(p.roi));
  const auto& f = scene.frames.at(frame);
  in.world_to_ego = f.ego_to_world.inverse();
  in.timestamp = f.timestamp;
  return in;
}

template FrameInput<float> build_frame_input(const Scene&, std::size_t, std::mt19937_64&, const SimConfig&, bool);
template FrameInput<double> build_frame_input(const Scene&, std::size_t, std::mt19937_64&, const SimConfig&, bool);

}  // namespace dvpe
