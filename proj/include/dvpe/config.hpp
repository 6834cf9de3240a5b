#pragma once

#include "dvpe/assign.hpp"
#include "dvpe/memory.hpp"
#include "dvpe/model.hpp"
#include "dvpe/sim.hpp"

#include <cstdint>
#include <string>

namespace dvpe {

struct OptimConfig {
  std::string type = "adamw";  // adamw | sgd
  double lr = 2e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double min_lr_ratio = 0.05;
  int warmup = 100;
  int steps = 5000;
  int batch = 1;  // independent scene streams per step
  double grad_clip = 5.0;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int log_every = 50;
  int eval_every = 0;
  int eval_scenes = 50;
  bool check_finite = true;
  std::string out = "run";
};

struct RunConfig {
  ModelConfig model;
  SimConfig sim;
  MemoryConfig memory;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;

  /// Desk-scale defaults: 2 layers, C=32, 64 queries, six cameras, 6 streams
  /// per step, a 32 m cylinder and 4 key-ray bands.
  static RunConfig micro();
  /// Keeps model and simulator dimensions consistent.
  void sync();
};

/// Flat `section.key = value` text. Blank lines and '#' comments are
/// ignored; unknown keys throw.
RunConfig parse_config(const std::string& text, RunConfig base = RunConfig::micro());
RunConfig load_config(const std::string& path, RunConfig base = RunConfig::micro());
std::string config_to_text(const RunConfig& cfg);
/// Applies one `key=value` override.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dvpe
