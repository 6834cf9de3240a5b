#include "dvpe/train.hpp"

#include <cmath>

namespace dvpe {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kFrameStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kInitStream = 4;

bool uses_proposals(const ModelConfig& m) { return m.temporal && m.memory; }

void check_finite(const LossBreakdown& b, int step) {
  const std::pair<const char*, double> terms[] = {
      {"l3d", b.l3d}, {"l3d_aux", b.l3d_aux}, {"cls", b.cls}, {"box", b.box}, {"total", b.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NonFiniteError(std::string("loss term ") + name, step);
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.total += b.total;
  acc.l3d += b.l3d;
  acc.l3d_aux += b.l3d_aux;
  acc.cls += b.cls;
  acc.box += b.box;
  acc.positives += b.positives;
  acc.lambda1 = b.lambda1;
  acc.lambda3 = b.lambda3;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

Scene training_scene(const RunConfig& cfg, std::uint64_t index) {
  std::mt19937_64 rng(derive_seed(cfg.train.seed, kSceneStream, index));
  return generate_scene(rng, cfg.sim);
}

std::vector<Scene> evaluation_scenes(const RunConfig& cfg, int count, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, kEvalStream, static_cast<std::uint64_t>(i)));
    out.push_back(generate_scene(rng, cfg.sim));
  }
  return out;
}

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)), opt_(cfg_.optim) {
  cfg_.sync();
  cfg_.model.validate();
  cfg_.sim.validate();
  if (cfg_.optim.batch < 1) throw std::invalid_argument("optim.batch must be >= 1");
  params_ = ModelParams<float>::create(cfg_.model, derive_seed(cfg_.train.seed, kInitStream));
  for (int b = 0; b < cfg_.optim.batch; ++b) streams_.push_back(Stream{~0ULL, {}, MemoryQueue(cfg_.memory)});
}

void Trainer::prepare_stream(std::size_t b, int step) {
  const auto frames = static_cast<std::uint64_t>(cfg_.sim.frames);
  const std::uint64_t idx = (static_cast<std::uint64_t>(step) / frames) * streams_.size() + b;
  auto& s = streams_[b];
  if (s.scene_index == idx) return;
  s.scene_index = idx;
  s.scene = training_scene(cfg_, idx);
  s.memory.clear();
}

FrameInput<float> Trainer::frame_input(const Stream& s, std::size_t, int step) const {
  const auto frame = static_cast<std::uint64_t>(step) % static_cast<std::uint64_t>(cfg_.sim.frames);
  std::mt19937_64 rng(derive_seed(cfg_.train.seed, kFrameStream, s.scene_index * 1024 + frame));
  return build_frame_input<float>(s.scene, frame, rng, cfg_.sim, uses_proposals(cfg_.model));
}

StepLog Trainer::step() {
  StepLog log;
  log.step = step_;
  log.lr = cosine_lr(step_, cfg_.optim);
  params_->store.zero_grad();
  const auto frame = static_cast<std::size_t>(step_ % cfg_.sim.frames);
  num::Tape<float> tape;
  KeyPeCache key_cache;
  num::Var<float> total;
  for (std::size_t b = 0; b < streams_.size(); ++b) {
    prepare_stream(b, step_);
    auto& s = streams_[b];
    const auto in = frame_input(s, b, step_);
    const auto gts = boxes_in_ego(s.scene, frame);
    ForwardOptions fo;
    fo.training = true;
    fo.memory = cfg_.model.memory ? &s.memory : nullptr;
    fo.key_cache = &key_cache;
    const auto out = decoder_forward(tape, *params_, in, fo);
    auto loss = detection_loss(tape, out, std::span<const WorldBox>(gts), cfg_.loss);
    if (cfg_.train.check_finite) check_finite(loss.breakdown, step_);
    total = total.valid() ? num::add(total, loss.total) : loss.total;
    accumulate(log.loss, loss.breakdown);
    log.gts += gts.size();
    log.memory_entries += out.memory_entries;
    if (cfg_.model.memory && cfg_.model.temporal) push_memory(s.memory, *params_, out, in);
  }
  tape.backward(streams_.size() > 1 ? num::scale(total, 1.0f / static_cast<float>(streams_.size())) : total);
  log.grad_norm = clip_grad_norm(params_->store, cfg_.optim.grad_clip);
  if (cfg_.train.check_finite && !std::isfinite(log.grad_norm)) throw NonFiniteError("gradient norm", step_);
  opt_.step(params_->store, log.lr);
  ++step_;
  return log;
}

void Trainer::run(const std::function<void(const StepLog&)>& on_step) {
  while (step_ < cfg_.optim.steps) {
    const auto log = step();
    if (on_step) on_step(log);
  }
}

Checkpoint Trainer::checkpoint() const {
  return make_checkpoint(params_->store, &opt_, config_to_text(cfg_), step_);
}

void Trainer::resume(const Checkpoint& ck) {
  restore_checkpoint(ck, params_->store, &opt_);
  const auto* st = ck.find("meta.step");
  if (st == nullptr) throw CheckpointFormatError("checkpoint: missing meta.step");
  step_ = static_cast<int>(tensor_as_i64(*st));
  const int offset = step_ % cfg_.sim.frames;
  if (offset == 0 || !(cfg_.model.memory && cfg_.model.temporal)) return;
  const int start = step_ - offset;
  for (std::size_t b = 0; b < streams_.size(); ++b) {
    prepare_stream(b, start);
    auto& s = streams_[b];
    for (int k = start; k < step_; ++k) {
      const auto in = frame_input(s, b, k);
      num::Tape<float> tape;
      ForwardOptions fo;
      fo.training = true;
      fo.memory = &s.memory;
      const auto out = decoder_forward(tape, *params_, in, fo);
      push_memory(s.memory, *params_, out, in);
    }
  }
}

MetricsReport evaluate_model(const ModelParams<float>& params, const RunConfig& cfg, std::span<const Scene> scenes,
                             const EvalOptions& opts) {
  std::vector<FrameDetections> frames;
  const bool mem = opts.memory && cfg.model.memory && cfg.model.temporal;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const auto& scene = scenes[si];
    MemoryQueue queue(cfg.memory);
    num::Tape<float> tape;
    KeyPeCache key_cache;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      std::mt19937_64 rng(derive_seed(opts.seed, kFrameStream, si * 1024 + f));
      const auto in = build_frame_input<float>(scene, f, rng, cfg.sim, mem);
      ForwardOptions fo;
      fo.training = false;
      fo.memory = mem ? &queue : nullptr;
      fo.key_cache = &key_cache;
      const auto out = decoder_forward(tape, params, in, fo);
      FrameDetections d;
      d.preds = decode_boxes(out.layers.back(), cfg.model.queries);
      d.gts = boxes_in_ego(scene, f);
      frames.push_back(std::move(d));
      if (mem) push_memory(queue, params, out, in);
    }
  }
  return evaluate(frames, static_cast<int>(cfg.model.classes));
}

LoadedModel load_model(const Checkpoint& ck) {
  const auto* c = ck.find("meta.config");
  if (c == nullptr) throw CheckpointFormatError("checkpoint: missing meta.config");
  LoadedModel m;
  m.config = parse_config(tensor_as_text(*c));
  m.config.sync();
  m.params = ModelParams<float>::create(m.config.model, 0);
  restore_checkpoint<float>(ck, m.params->store, nullptr);
  if (const auto* st = ck.find("meta.step")) m.step = tensor_as_i64(*st);
  return m;
}

}  // namespace dvpe
