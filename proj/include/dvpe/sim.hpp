#pragma once

#include "dvpe/geom.hpp"
#include "dvpe/memory.hpp"
#include "dvpe/model.hpp"
#include "dvpe/num/tensor.hpp"

#include <random>
#include <vector>

namespace dvpe {

struct SceneFrame {
  double timestamp = 0.0;
  HomMat4 ego_to_world;
  std::vector<WorldBox> boxes;  // world frame
};

/// A multi-frame synthetic sequence. Camera extrinsics map the ego frame
/// into each camera.
struct Scene {
  int version = 1;
  std::vector<CameraModel> rig;
  std::vector<SceneFrame> frames;
};

struct SimConfig {
  int cameras = 6;
  int feat_h = 16;
  int feat_w = 16;
  double hfov_deg = 80.0;
  double vfov_deg = 50.0;
  double mount_radius = 1.0;
  double mount_height = 1.5;
  int depth_bins = 8;
  double depth_near = 1.0;
  double depth_far = 60.0;

  int classes = 3;
  int min_boxes = 1;
  int max_boxes = 6;
  double min_range = 5.0;
  double max_range = 30.0;
  double min_separation = 3.0;
  double max_speed = 3.0;
  double ego_max_speed = 5.0;
  double ego_max_yaw_rate = 0.1;
  int frames = 4;
  double frame_dt = 0.5;

  double noise = 0.02;  // feature noise sigma
  double kernel_floor = 0.06;  // minimum angular kernel width, radians
  double kernel_power = 1.0;   // exp(-(d^2 / 2 sigma^2)^p); p > 1 flattens the top

  double proposal_jitter = 0.05;  // fraction of the 2D box size
  double proposal_noise = 0.02;
  double false_positive_rate = 0.0;
  double false_negative_rate = 0.0;
  double class_confusion = 0.1;

  void validate() const;
};

/// Nominal sizes (l, w, h) per class id.
Vec3 class_prior_size(int label);

std::vector<CameraModel> default_rig(const SimConfig& cfg);

Scene generate_scene(std::mt19937_64& rng, const SimConfig& cfg);

/// Width of a rendered token feature: class one-hot, log size, log apparent
/// scale, log depth, angular offsets, relative yaw, objectness.
std::size_t signature_dim(int classes);
/// Width of a proposal feature: class one-hot, log size, normalized 2D box, log depth.
std::size_t roi_feature_dim(int classes);

/// Boxes of one frame expressed in that frame's ego coordinates.
std::vector<WorldBox> boxes_in_ego(const Scene& scene, std::size_t frame);

/// Token features [H*W x signature_dim] of one camera. `rng` is only drawn
/// from when noise > 0.
num::Tensor<double> render_features(const Scene& scene, std::size_t view, std::size_t frame, std::mt19937_64& rng,
                                    double noise, const SimConfig& cfg);

struct Proposal {
  double u0 = 0.0, v0 = 0.0, u1 = 0.0, v1 = 0.0;  // pixel rectangle
  RoiInput roi;
  int gt_index = -1;  // -1 for false positives
};

std::vector<Proposal> oracle_2d_proposals(const Scene& scene, std::size_t view, std::size_t frame,
                                          std::mt19937_64& rng, const SimConfig& cfg);

/// Features, rays and proposals for the whole rig at one frame.
template <typename T>
FrameInput<T> build_frame_input(const Scene& scene, std::size_t frame, std::mt19937_64& rng, const SimConfig& cfg,
                                 bool with_proposals = true);

}  // namespace dvpe
