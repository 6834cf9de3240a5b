#pragma once

#include "dvpe/attention.hpp"
#include "dvpe/geom.hpp"
#include "dvpe/memory.hpp"
#include "dvpe/num/ops.hpp"
#include "dvpe/partition.hpp"
#include "dvpe/pos_embed.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace dvpe {

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  int layers = 2;
  std::size_t queries = 64;        // default group
  int extra_groups = 0;            // G
  std::size_t group_queries = 64;  // per additional group
  int views = 6;
  double theta_s = 0.0;
  double shift_step = 20.0 * kPi / 180.0;
  std::size_t depth_bins = 8;
  double cylinder_radius = 55.0;
  double z_min = -5.0;
  double z_max = 3.0;
  std::size_t classes = 3;
  std::size_t feat_dim = 16;
  std::size_t roi_dim = 16;
  int num_freqs = 8;
  int key_freqs = 0;  // sincos bands on key rays; 0 feeds raw coordinates
  double max_freq = 64.0;
  std::size_t pe_hidden = 64;
  std::size_t ffn_hidden = 64;
  std::size_t head_hidden = 64;
  bool dvpe = true;       // false: one global space, no virtual rotation
  bool temporal = true;   // run the temporal attention block
  bool memory = true;     // feed cached entries into temporal attention
  bool head_pe = true;    // head also sees the query's virtual-frame PE
  PerceptionRange range;

  void validate() const;
  std::size_t total_queries(bool training) const {
    return queries + (training ? static_cast<std::size_t>(extra_groups) * group_queries : 0);
  }
};

/// Area-uniform samples in the cylinder r <= radius, z in [z_min, z_max].
std::vector<Vec3> init_reference_points(std::size_t count, double radius, double z_min, double z_max, num::Rng& rng);

/// Regression layout of the head output.
inline constexpr std::size_t kRegCenter = 0;   // 3, virtual-frame offset
inline constexpr std::size_t kRegLogSize = 3;  // 3
inline constexpr std::size_t kRegYaw = 6;      // sin, cos (virtual frame)
inline constexpr std::size_t kRegVel = 8;      // 2 (virtual frame)
inline constexpr std::size_t kRegDim = 10;

struct LocalBox {
  Vec3 center_offset = Vec3::Zero();
  Vec3 log_size = Vec3::Zero();
  double yaw = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  std::vector<double> logits;
};

struct WorldBox {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  int label = 0;
  std::vector<double> logits;
  double score = 0.0;
};

/// c = P_q + Rz(-theta)c_hat, yaw = wrap(yaw_hat - theta), velocity rotated by -theta.
WorldBox local_to_world(const LocalBox& box, const Vec3& ref_point, double theta_v);
/// Inverse of local_to_world for a given reference point and wedge rotation.
LocalBox world_to_local(const WorldBox& box, const Vec3& ref_point, double theta_v);

template <typename T>
struct HeadParams {
  num::LayerNormParams<T> norm;
  num::Mlp<T> reg;
  num::Mlp<T> cls;
};

template <typename T>
struct LayerParams {
  AttnBlock<T> temporal;
  AttnBlock<T> cross;
  num::LayerNormParams<T> ffn_norm;
  num::Mlp<T> ffn;
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  num::ParamStore<T> store;
  num::Param<T>* feat_w = nullptr;
  num::Param<T>* feat_b = nullptr;
  std::vector<num::Param<T>*> query_embed;  // per group [n x C]
  std::vector<num::Param<T>*> ref_points;   // per group [n x 3]
  DvpeParams<T> pe;
  num::Mlp<T> global_psi;
  RoiEncoder<T> roi;
  std::vector<LayerParams<T>> layers;
  HeadParams<T> head;
  mutable std::uint64_t extra_group_reads = 0;

  static std::unique_ptr<ModelParams> create(const ModelConfig& cfg, std::uint64_t seed);
  ModelParams() = default;
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;
};

/// Everything the decoder consumes for one frame, expressed in the current ego frame.
template <typename T>
struct FrameInput {
  std::vector<CameraModel> rig;
  RayGrid rays;
  num::Tensor<T> features;  // [tokens x feat_dim], camera-major
  std::vector<RoiInput> proposals;
  HomMat4 world_to_ego;
  double timestamp = 0.0;
};

template <typename T>
struct LayerOutput {
  num::Var<T> center;  // [M x 3] ego frame
  num::Var<T> reg;     // [M x kRegDim] virtual frame
  num::Var<T> logits;  // [M x classes]
  std::vector<double> theta;  // per query wedge rotation
  ViewPartition query_part;
};

struct AttentionTrace {
  int layer = -1;
  std::vector<double> probs;  // [V, heads, Lq, Lk] of the traced layer
  ViewPartition query_part;
  ViewPartition token_part;
};

template <typename T>
struct DecoderOutput {
  std::vector<LayerOutput<T>> layers;
  num::Var<T> embeddings;  // final [M x C]
  std::vector<int> query_group;
  std::size_t memory_entries = 0;
};

/// Key PEs already on a tape, reused by later frames with identical rays.
struct KeyPeCache {
  struct Entry {
    const void* tape = nullptr;
    int layer = 0;
    int id = -1;
    std::vector<Vec3> points;
  };
  std::vector<Entry> entries;
};

struct ForwardOptions {
  bool training = true;          // include the additional groups
  const MemoryQueue* memory = nullptr;
  AttentionTrace* trace = nullptr;
  KeyPeCache* key_cache = nullptr;
};

template <typename T>
DecoderOutput<T> decoder_forward(num::Tape<T>& tape, const ModelParams<T>& params, const FrameInput<T>& frame,
                                 const ForwardOptions& opts);

/// Decodes one layer's predictions for the default group.
template <typename T>
std::vector<WorldBox> decode_boxes(const LayerOutput<T>& layer, std::size_t count);

/// Detached memory entries for the default group plus encoded proposals.
template <typename T>
void push_memory(MemoryQueue& queue, const ModelParams<T>& params, const DecoderOutput<T>& out,
                 const FrameInput<T>& frame);

double sigmoid(double x);

}  // namespace dvpe
