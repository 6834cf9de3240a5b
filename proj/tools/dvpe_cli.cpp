#include "CLI11.hpp"
#include "dvpe/bench.hpp"
#include "dvpe/checkpoint.hpp"
#include "dvpe/config.hpp"
#include "dvpe/scene_io.hpp"
#include "dvpe/train.hpp"
#include "dvpe/viz.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dvpe;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

RunConfig base_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig::micro() : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.sync();
  return cfg;
}

std::vector<Scene> scenes_from_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Scene> out;
  for (const auto& f : files) out.push_back(load_scene(f.string()));
  if (out.empty()) throw std::runtime_error("no scene files in " + dir);
  return out;
}

void print_metrics(const MetricsReport& r) {
  std::printf("mAP %.4f |", r.map);
  for (std::size_t i = 0; i < r.thresholds.size(); ++i)
    std::printf(" AP@%.1fm %.4f", r.thresholds[i], r.ap_by_threshold[i]);
  std::printf(" | mATE %.3f mAOE %.3f mAVE %.3f\n", r.mate, r.maoe, r.mave);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divided-view position embedding detector on a synthetic camera rig"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write synthetic scenes as JSON files");
  std::string sim_config, sim_out = "scenes";
  int sim_count = 10;
  std::uint64_t sim_seed = 1;
  std::vector<std::string> sim_set;
  sim->add_option("--config", sim_config, "Config file");
  sim->add_option("--out", sim_out, "Output directory");
  sim->add_option("--count", sim_count, "Number of scenes")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "Scene seed");
  sim->add_option("--set", sim_set, "Config override key=value");

  // train
  auto* train = app.add_subcommand("train", "Train on streamed synthetic scenes");
  std::string tr_config, tr_out, tr_resume;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_steps;
  std::vector<std::string> tr_set;
  train->add_option("--config", tr_config, "Config file");
  train->add_option("--out", tr_out, "Run directory (default: train.out)");
  train->add_option("--seed", tr_seed, "Run seed");
  train->add_option("--steps", tr_steps, "Total optimizer steps");
  train->add_option("--resume", tr_resume, "Checkpoint to resume from");
  train->add_option("--set", tr_set, "Config override key=value");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (default query group only)");
  std::string ev_ckpt, ev_scenes, ev_out;
  int ev_count = 50;
  std::uint64_t ev_seed = 12345;
  bool ev_no_memory = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--scenes", ev_scenes, "Directory of scene JSON files (default: generated)");
  ev->add_option("--count", ev_count, "Generated scene count when --scenes is absent");
  ev->add_option("--seed", ev_seed, "Seed for generated scenes and sensor noise");
  ev->add_option("--out", ev_out, "Metrics report path");
  ev->add_flag("--no-memory", ev_no_memory, "Disable the temporal memory");

  // bench
  auto* bench = app.add_subcommand("bench", "Attention cost: global versus divided");
  std::vector<int> b_views{4, 6, 8};
  std::size_t b_tokens = 1536, b_queries = 64;
  int b_trials = 5;
  std::string b_layout = "uniform", b_out;
  std::uint64_t b_seed = 7;
  bench->add_option("--views", b_views, "Wedge counts")->delimiter(',');
  bench->add_option("--tokens", b_tokens, "Token count");
  bench->add_option("--queries", b_queries, "Query count");
  bench->add_option("--trials", b_trials, "Random trials per case");
  bench->add_option("--layout", b_layout, "uniform | one-wedge")->check(CLI::IsMember({"uniform", "one-wedge"}));
  bench->add_option("--seed", b_seed, "Seed");
  bench->add_option("--out", b_out, "Report path");

  // viz
  auto* viz = app.add_subcommand("viz", "Wedge plot and attention heatmaps as SVG");
  std::string v_ckpt, v_scene, v_out = "viz";
  int v_layer = 0, v_head = 0, v_query = 0, v_frame = 0;
  viz->add_option("--ckpt", v_ckpt, "Checkpoint")->required();
  viz->add_option("--scene", v_scene, "Scene JSON (default: a generated scene)");
  viz->add_option("--layer", v_layer, "Decoder layer");
  viz->add_option("--head", v_head, "Attention head");
  viz->add_option("--query", v_query, "Query index");
  viz->add_option("--frame", v_frame, "Frame index");
  viz->add_option("--out", v_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const auto cfg = base_config(sim_config, sim_set);
      fs::create_directories(sim_out);
      const auto scenes = evaluation_scenes(cfg, sim_count, sim_seed);
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04zu.json", i);
        save_scene((fs::path(sim_out) / name).string(), scenes[i]);
      }
      std::printf("wrote %zu scenes to %s\n", scenes.size(), sim_out.c_str());
    } else if (*train) {
      auto cfg = base_config(tr_config, tr_set);
      if (tr_seed) cfg.train.seed = *tr_seed;
      if (tr_steps) cfg.optim.steps = *tr_steps;
      if (!tr_out.empty()) cfg.train.out = tr_out;
      const fs::path out = cfg.train.out;
      fs::create_directories(out);
      Trainer trainer(cfg);
      if (!tr_resume.empty()) trainer.resume(load_checkpoint(tr_resume));
      write_text(out / "config.txt", config_to_text(trainer.config()));
      const bool append = !tr_resume.empty();
      std::ofstream log(out / "log.csv", append ? std::ios::app : std::ios::trunc);
      if (!append) log << "step,lr,total,l3d,l3d_aux,cls,box,positives,gts,grad_norm,memory_entries\n";
      const auto eval_set = evaluation_scenes(trainer.config(), cfg.train.eval_scenes, cfg.train.seed + 1000003);
      const auto t0 = std::chrono::steady_clock::now();
      double avg = 0.0;
      trainer.run([&](const StepLog& s) {
        const auto& b = s.loss;
        log << s.step << ',' << s.lr << ',' << b.total << ',' << b.l3d << ',' << b.l3d_aux << ',' << b.cls << ','
            << b.box << ',' << b.positives << ',' << s.gts << ',' << s.grad_norm << ',' << s.memory_entries << '\n';
        avg = s.step == 0 ? b.total : 0.98 * avg + 0.02 * b.total;
        const int done = s.step + 1;
        if (cfg.train.log_every > 0 && done % cfg.train.log_every == 0) {
          const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::printf("step %6d  loss %.4f  avg %.4f  pos %zu  lr %.2e  %.1fs\n", done, b.total, avg, b.positives,
                      s.lr, sec);
          std::fflush(stdout);
        }
        if (cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0) {
          const auto r = evaluate_model(trainer.params(), trainer.config(), eval_set);
          std::printf("eval @%d: ", done);
          print_metrics(r);
          write_text(out / ("metrics_" + std::to_string(done) + ".json"), metrics_to_json(r));
          save_checkpoint((out / "checkpoint.bin").string(), trainer.checkpoint());
        }
      });
      save_checkpoint((out / "checkpoint.bin").string(), trainer.checkpoint());
      const auto r = evaluate_model(trainer.params(), trainer.config(), eval_set);
      write_text(out / "metrics.json", metrics_to_json(r));
      print_metrics(r);
    } else if (*ev) {
      auto m = load_model(load_checkpoint(ev_ckpt));
      const auto scenes = ev_scenes.empty() ? evaluation_scenes(m.config, ev_count, ev_seed) : scenes_from_dir(ev_scenes);
      EvalOptions eo;
      eo.memory = !ev_no_memory;
      eo.seed = ev_seed;
      const auto r = evaluate_model(*m.params, m.config, scenes, eo);
      print_metrics(r);
      if (m.params->extra_group_reads != 0) throw std::logic_error("evaluation touched additional query groups");
      if (!ev_out.empty()) write_text(ev_out, metrics_to_json(r));
    } else if (*bench) {
      std::vector<BenchCase> grid;
      for (int v : b_views) {
        BenchCase c;
        c.views = v;
        c.tokens = b_tokens;
        c.queries = b_queries;
        c.trials = b_trials;
        c.layout = b_layout == "uniform" ? TokenLayout::Uniform : TokenLayout::OneWedge;
        grid.push_back(c);
      }
      const auto rows = bench_attention(grid, b_seed);
      std::printf("%5s %7s %7s %12s %12s %7s %8s %10s %10s\n", "V", "tokens", "queries", "global", "divided",
                  "ratio", "padding", "global_ms", "divided_ms");
      for (const auto& r : rows)
        std::printf("%5d %7zu %7zu %12.1f %12.1f %7.4f %8.3f %10.3f %10.3f\n", r.views, r.tokens, r.queries,
                    r.global_interactions, r.divided_interactions, r.interaction_ratio, r.padding_overhead,
                    r.global_ms, r.divided_ms);
      if (!b_out.empty()) write_text(b_out, bench_to_json(rows));
    } else if (*viz) {
      auto m = load_model(load_checkpoint(v_ckpt));
      const auto& mc = m.config.model;
      if (v_layer < 0 || v_layer >= mc.layers) throw std::out_of_range("--layer out of range");
      Scene scene = v_scene.empty() ? evaluation_scenes(m.config, 1, 99)[0] : load_scene(v_scene);
      if (v_frame < 0 || static_cast<std::size_t>(v_frame) >= scene.frames.size())
        throw std::out_of_range("--frame out of range");
      fs::create_directories(v_out);

      std::vector<Vec3> refs;
      std::vector<int> groups;
      for (std::size_t g = 0; g < m.params->ref_points.size(); ++g) {
        const auto& t = m.params->ref_points[g]->value;
        for (std::size_t i = 0; i < t.rows(); ++i) {
          refs.emplace_back(t.at(i, 0), t.at(i, 1), t.at(i, 2));
          groups.push_back(static_cast<int>(g));
        }
      }
      std::vector<BevPlotLayer> layers;
      const PartitionConfig pc{mc.dvpe ? mc.views : 1, mc.theta_s, mc.shift_step};
      for (int l = 0; l < mc.layers; ++l) layers.push_back({l, mc.dvpe ? shift_schedule(l, pc) : 0.0});
      write_text(fs::path(v_out) / "bev_wedges.svg", bev_wedge_svg(refs, groups, pc.views, layers, mc.cylinder_radius));

      MemoryQueue queue(m.config.memory);
      const bool mem = mc.temporal && mc.memory;
      AttentionTrace trace;
      for (int f = 0; f <= v_frame; ++f) {
        std::mt19937_64 rng(derive_seed(0, 2, static_cast<std::uint64_t>(f)));
        const auto in = build_frame_input<float>(scene, static_cast<std::size_t>(f), rng, m.config.sim, mem);
        num::Tape<float> tape;
        ForwardOptions fo;
        fo.training = false;
        fo.memory = mem ? &queue : nullptr;
        trace = AttentionTrace{};
        trace.layer = f == v_frame ? v_layer : -1;
        fo.trace = &trace;
        const auto out = decoder_forward(tape, *m.params, in, fo);
        if (mem) push_memory(queue, *m.params, out, in);
      }
      const auto w = query_token_attention(trace, mc.heads, static_cast<std::size_t>(v_head),
                                           static_cast<std::size_t>(v_query));
      const std::string title = "layer " + std::to_string(v_layer) + " head " + std::to_string(v_head) + " query " +
                                std::to_string(v_query) + " (wedge " +
                                std::to_string(trace.query_part.group[static_cast<std::size_t>(v_query)]) + ")";
      write_text(fs::path(v_out) / "attention.svg", attention_heatmap_svg(w, scene.rig, title));
      std::printf("wrote %s/bev_wedges.svg and %s/attention.svg\n", v_out.c_str(), v_out.c_str());
    }
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return 3;
  } catch (const CheckpointMismatchError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
