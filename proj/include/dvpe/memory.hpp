#pragma once

#include "dvpe/geom.hpp"
#include "dvpe/num/ops.hpp"

#include <array>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace dvpe {

/// Indices of the k largest scores; ties go to the lower index.
std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k);

/// Camera data needed to lift a 2D proposal to 3D.
struct RoiCamera {
  Intrinsics intr;
  int feat_w = 1;
  int feat_h = 1;
  HomMat4 world_to_cam;

  /// (fx/W, fy/H, cx/W, cy/H).
  std::array<double, 4> normalized_intrinsics() const;
};

/// Raw proposal inputs, kept so the encoder can be re-run with current weights.
struct RoiInput {
  std::vector<double> feature;
  std::vector<double> class_scores;
  RoiCamera camera;
};

enum class EntryKind { Decoder, Roi };

struct MemoryEntry {
  EntryKind kind = EntryKind::Decoder;
  std::vector<double> embedding;  // [C]
  Vec3 point = Vec3::Zero();      // source ego frame
  double score = 0.0;
  std::optional<RoiInput> roi;
};

struct MemoryConfig {
  std::size_t frames = 4;
  std::size_t roi_topk = 128;
  std::size_t decoder_topk = 256;
};

struct FrameMemory {
  double timestamp = 0.0;
  HomMat4 world_to_ego;
  std::vector<MemoryEntry> entries;
};

/// FIFO of per-frame entry sets holding at most `cfg.frames` frames.
class MemoryQueue {
 public:
  explicit MemoryQueue(MemoryConfig cfg = {}) : cfg_(cfg) {}

  /// Keeps the top-scoring entries of each kind and evicts the oldest frame
  /// beyond capacity. Timestamps must increase.
  void push_frame(std::vector<MemoryEntry> decoder, std::vector<MemoryEntry> roi, const HomMat4& world_to_ego,
                  double timestamp);

  const std::deque<FrameMemory>& frames() const { return frames_; }
  std::size_t size() const { return frames_.size(); }
  std::size_t entry_count() const;
  const MemoryConfig& config() const { return cfg_; }
  void clear() { frames_.clear(); }

 private:
  MemoryConfig cfg_;
  std::deque<FrameMemory> frames_;
};

struct CompensatedEntry {
  EntryKind kind = EntryKind::Decoder;
  const std::vector<double>* embedding = nullptr;
  const RoiInput* roi = nullptr;
  Vec3 point = Vec3::Zero();  // current ego frame
  double dt = 0.0;
  HomMat4 relative;  // source ego -> current ego
};

/// Entries re-expressed in the current ego frame. Borrowed from the queue.
struct MemoryView {
  std::vector<CompensatedEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  /// [n x 13]: dt followed by the top three rows of the relative transform.
  template <typename T>
  num::Tensor<T> motion_features() const;
};

/// Relative transform E = world_to_ego_now * world_to_ego_src^-1.
HomMat4 relative_ego(const HomMat4& world_to_ego_now, const HomMat4& world_to_ego_src);

MemoryView ego_compensate(const MemoryQueue& queue, const HomMat4& world_to_ego_now, double timestamp_now);

template <typename T>
struct RoiEncoder {
  num::Param<T>* proj_w = nullptr;  // linear stand-in for the RoI convolution
  num::Param<T>* proj_b = nullptr;
  num::Mlp<T> embed;                // [proj; class scores] -> C
  num::Mlp<T> point;                // [proj; intrinsics] -> (u_norm, v_norm, depth)
  num::Mlp<T> motion;               // motion features -> C

  static RoiEncoder create(num::ParamStore<T>& store, const std::string& prefix, std::size_t roi_dim,
                           std::size_t classes, std::size_t proj_dim, std::size_t hidden, std::size_t dim,
                           num::Rng& rng, double depth_init = 15.0);
};

inline constexpr double kRoiDepthFloor = 0.5;

/// Lifts per-row (u_norm, v_norm, depth) through each camera. Depths below
/// the floor are clamped (zero gradient) and counted in diagnostics.
template <typename T>
num::Var<T> roi_unproject(num::Var<T> raw, std::span<const RoiCamera> cams);

template <typename T>
struct RoiEncoding {
  num::Var<T> embedding;  // O_e [n x C]
  num::Var<T> point;      // P_e [n x 3], frame of the cameras' world_to_cam
};

template <typename T>
RoiEncoding<T> encode_roi(num::Tape<T>& tape, const RoiEncoder<T>& enc, std::span<const RoiInput> rois);

/// Maps points [n x 3] by per-row rigid transforms; differentiable in points.
template <typename T>
num::Var<T> transform_points(num::Var<T> points, std::span<const HomMat4> transforms);

}  // namespace dvpe
