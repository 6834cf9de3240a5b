#pragma once

#include "dvpe/checkpoint.hpp"
#include "dvpe/config.hpp"
#include "dvpe/metrics.hpp"
#include "dvpe/optim.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvpe {

/// Raised when a loss term or the gradient norm is NaN or infinite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& term, int step)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step)), term_(term), step_(step) {}
  const std::string& term() const { return term_; }
  int step() const { return step_; }

 private:
  std::string term_;
  int step_;
};

struct StepLog {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;     // summed over streams
  double grad_norm = 0.0;  // before clipping
  std::size_t gts = 0;
  std::size_t memory_entries = 0;
};

/// Seed of an independent stream, derived by splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Training scene `index` of a run. Pure in (seed, index).
Scene training_scene(const RunConfig& cfg, std::uint64_t index);
/// Held-out scenes, disjoint seed stream from training.
std::vector<Scene> evaluation_scenes(const RunConfig& cfg, int count, std::uint64_t seed);

/// Streams scenes frame by frame; every step consumes one frame from each
/// of optim.batch streams. Memory is cleared when a stream starts a scene.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  StepLog step();
  /// Runs until optim.steps; `on_step` sees every log.
  void run(const std::function<void(const StepLog&)>& on_step = {});

  int steps_done() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  ModelParams<float>& params() { return *params_; }
  const ModelParams<float>& params() const { return *params_; }
  Optimizer<float>& optimizer() { return opt_; }

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer state and the step counter. Memory for
  /// a stream that is mid-scene is rebuilt by replaying its earlier frames.
  void resume(const Checkpoint& ck);

 private:
  struct Stream {
    std::uint64_t scene_index = ~0ULL;
    Scene scene;
    MemoryQueue memory;
  };
  void prepare_stream(std::size_t b, int step);
  FrameInput<float> frame_input(const Stream& s, std::size_t b, int step) const;

  RunConfig cfg_;
  std::unique_ptr<ModelParams<float>> params_;
  Optimizer<float> opt_;
  std::vector<Stream> streams_;
  int step_ = 0;
};

struct EvalOptions {
  bool memory = true;
  std::uint64_t seed = 0;  // proposal / feature noise
};

/// Default group only, final layer, memory carried across frames of a scene.
MetricsReport evaluate_model(const ModelParams<float>& params, const RunConfig& cfg, std::span<const Scene> scenes,
                             const EvalOptions& opts = {});

/// Rebuilds a model from a checkpoint's embedded config.
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<ModelParams<float>> params;
  std::int64_t step = 0;
};
LoadedModel load_model(const Checkpoint& ck);

}  // namespace dvpe
