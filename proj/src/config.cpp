#include "dvpe/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace dvpe {

RunConfig RunConfig::micro() {
  RunConfig c;
  c.model.cylinder_radius = 32.0;
  c.model.key_freqs = 4;
  c.optim.batch = 6;
  c.sync();
  return c;
}

void RunConfig::sync() {
  model.classes = static_cast<std::size_t>(sim.classes);
  model.feat_dim = signature_dim(sim.classes);
  model.roi_dim = roi_feature_dim(sim.classes);
  model.depth_bins = static_cast<std::size_t>(sim.depth_bins);
}

namespace {

template <typename F>
void visit(RunConfig& c, F&& f) {
  auto& m = c.model;
  f("model.dim", m.dim);
  f("model.heads", m.heads);
  f("model.layers", m.layers);
  f("model.queries", m.queries);
  f("model.extra_groups", m.extra_groups);
  f("model.group_queries", m.group_queries);
  f("model.views", m.views);
  f("model.theta_s", m.theta_s);
  f("model.shift_step", m.shift_step);
  f("model.cylinder_radius", m.cylinder_radius);
  f("model.z_min", m.z_min);
  f("model.z_max", m.z_max);
  f("model.num_freqs", m.num_freqs);
  f("model.key_freqs", m.key_freqs);
  f("model.max_freq", m.max_freq);
  f("model.pe_hidden", m.pe_hidden);
  f("model.ffn_hidden", m.ffn_hidden);
  f("model.head_hidden", m.head_hidden);
  f("model.dvpe", m.dvpe);
  f("model.temporal", m.temporal);
  f("model.memory", m.memory);
  f("model.head_pe", m.head_pe);
  f("model.range_xy", m.range.xy);
  f("model.range_z_min", m.range.z_min);
  f("model.range_z_max", m.range.z_max);

  auto& s = c.sim;
  f("sim.cameras", s.cameras);
  f("sim.feat_h", s.feat_h);
  f("sim.feat_w", s.feat_w);
  f("sim.hfov_deg", s.hfov_deg);
  f("sim.vfov_deg", s.vfov_deg);
  f("sim.mount_radius", s.mount_radius);
  f("sim.mount_height", s.mount_height);
  f("sim.depth_bins", s.depth_bins);
  f("sim.depth_near", s.depth_near);
  f("sim.depth_far", s.depth_far);
  f("sim.classes", s.classes);
  f("sim.min_boxes", s.min_boxes);
  f("sim.max_boxes", s.max_boxes);
  f("sim.min_range", s.min_range);
  f("sim.max_range", s.max_range);
  f("sim.min_separation", s.min_separation);
  f("sim.max_speed", s.max_speed);
  f("sim.ego_max_speed", s.ego_max_speed);
  f("sim.ego_max_yaw_rate", s.ego_max_yaw_rate);
  f("sim.frames", s.frames);
  f("sim.frame_dt", s.frame_dt);
  f("sim.noise", s.noise);
  f("sim.kernel_floor", s.kernel_floor);
  f("sim.kernel_power", s.kernel_power);
  f("sim.proposal_jitter", s.proposal_jitter);
  f("sim.proposal_noise", s.proposal_noise);
  f("sim.false_positive_rate", s.false_positive_rate);
  f("sim.false_negative_rate", s.false_negative_rate);
  f("sim.class_confusion", s.class_confusion);

  f("memory.frames", c.memory.frames);
  f("memory.roi_topk", c.memory.roi_topk);
  f("memory.decoder_topk", c.memory.decoder_topk);

  auto& l = c.loss;
  f("loss.lambda1", l.lambda1);
  f("loss.lambda3", l.lambda3);
  f("loss.alpha", l.alpha);
  f("loss.gamma", l.gamma);
  f("loss.cost_cls", l.cost.cls);
  f("loss.cost_box", l.cost.box);
  f("loss.w_cls", l.w_cls);
  f("loss.w_box", l.w_box);
  f("loss.w_center", l.w_center);
  f("loss.w_size", l.w_size);
  f("loss.w_yaw", l.w_yaw);
  f("loss.w_vel", l.w_vel);

  auto& o = c.optim;
  f("optim.type", o.type);
  f("optim.lr", o.lr);
  f("optim.momentum", o.momentum);
  f("optim.beta1", o.beta1);
  f("optim.beta2", o.beta2);
  f("optim.eps", o.eps);
  f("optim.weight_decay", o.weight_decay);
  f("optim.min_lr_ratio", o.min_lr_ratio);
  f("optim.warmup", o.warmup);
  f("optim.steps", o.steps);
  f("optim.batch", o.batch);
  f("optim.grad_clip", o.grad_clip);

  auto& t = c.train;
  f("train.seed", t.seed);
  f("train.log_every", t.log_every);
  f("train.eval_every", t.eval_every);
  f("train.eval_scenes", t.eval_scenes);
  f("train.check_finite", t.check_finite);
  f("train.out", t.out);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

template <typename I>
void parse_int(const std::string& key, const std::string& v, I& out) {
  I x{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, x);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, v);
  out = x;
}

void assign(const std::string& key, const std::string& v, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v);
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}
void assign(const std::string& key, const std::string& v, int& out) { parse_int(key, v, out); }
void assign(const std::string& key, const std::string& v, std::size_t& out) { parse_int(key, v, out); }
static_assert(std::is_same_v<std::uint64_t, std::size_t>);
void assign(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1") out = true;
  else if (v == "false" || v == "0") out = false;
  else bad_value(key, v);
}
void assign(const std::string&, const std::string& v, std::string& out) { out = v; }

std::string show(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
std::string show(int x) { return std::to_string(x); }
std::string show(std::size_t x) { return std::to_string(x); }
std::string show(bool x) { return x ? "true" : "false"; }
std::string show(const std::string& x) { return x; }

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  bool found = false;
  visit(cfg, [&](const char* k, auto& field) {
    if (key == k) {
      assign(key, value, field);
      found = true;
    }
  });
  if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.sync();
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  visit(copy, [&](const char* k, auto& field) { out += std::string(k) + " = " + show(field) + "\n"; });
  return out;
}

}  // namespace dvpe
