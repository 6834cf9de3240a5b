#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "dvpe/checkpoint.hpp"
#include "dvpe/config.hpp"
#include "dvpe/train.hpp"

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace dvpe;

namespace {

RunConfig small_run(std::uint64_t seed = 1) {
  auto c = RunConfig::micro();
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.queries = 16;
  c.model.group_queries = 16;
  c.model.pe_hidden = c.model.ffn_hidden = c.model.head_hidden = 32;
  c.sim.feat_h = c.sim.feat_w = 8;
  c.train.seed = seed;
  c.optim.steps = 12;
  c.sync();
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dvpe_test_" + name)).string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("checkpoint save, load, save is byte-identical") {
  Trainer t(small_run());
  for (int i = 0; i < 3; ++i) t.step();
  const auto a = temp_path("a.bin"), b = temp_path("b.bin");
  save_checkpoint(a, t.checkpoint());
  save_checkpoint(b, load_checkpoint(a));
  CHECK(read_bytes(a) == read_bytes(b));
  CHECK(!std::filesystem::exists(a + ".tmp"));

  // parameters restored into a fresh model reproduce the same file
  auto loaded = load_model(load_checkpoint(a));
  CHECK(loaded.step == 3);
  const auto c = temp_path("c.bin");
  save_checkpoint(c, make_checkpoint<float>(loaded.params->store, nullptr, config_to_text(loaded.config), 3));
  const auto pa = load_checkpoint(a), pc = load_checkpoint(c);
  for (const auto& nt : pc.tensors) {
    if (nt.name.rfind("param.", 0) != 0) continue;
    const auto* other = pa.find(nt.name);
    REQUIRE(other != nullptr);
    CHECK(other->bytes == nt.bytes);
  }
  std::filesystem::remove(a);
  std::filesystem::remove(b);
  std::filesystem::remove(c);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Trainer t(small_run());
  auto bytes = serialize_checkpoint(t.checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), CheckpointFormatError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), CheckpointFormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), CheckpointFormatError);
  CHECK_THROWS_AS(deserialize_checkpoint({}), CheckpointFormatError);
  CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
}

TEST_CASE("altered model width lists mismatched tensors") {
  Trainer t(small_run());
  const auto ck = t.checkpoint();
  auto cfg = small_run().model;
  cfg.dim = 24;
  auto other = ModelParams<float>::create(cfg, 1);
  try {
    restore_checkpoint<float>(ck, other->store, nullptr);
    FAIL("expected a mismatch");
  } catch (const CheckpointMismatchError& e) {
    CHECK(!e.names().empty());
    bool has_embed = false;
    for (const auto& n : e.names()) has_embed = has_embed || n == "queries.g0.embed";
    CHECK(has_embed);
    CHECK(std::string(e.what()).find("queries.g0.embed") != std::string::npos);
  }
}

TEST_CASE("config text round trip") {
  auto c = small_run(77);
  c.loss.lambda3 = 0.5;
  c.optim.type = "sgd";
  c.model.extra_groups = 1;
  c.model.theta_s = 0.123456789012345;
  const auto text = config_to_text(c);
  const auto back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.model.theta_s == c.model.theta_s);
  CHECK_THROWS(parse_config("model.nonexistent = 3\n"));
  CHECK_THROWS(parse_config("model.dim = abc\n"));
  const auto commented = parse_config("# comment\n\nmodel.dim = 48\n");
  CHECK(commented.model.dim == 48);
  RunConfig o = c;
  set_config_value(o, "optim.lr", "0.01");
  CHECK(o.optim.lr == 0.01);
}

TEST_CASE("seed-fixed training is reproducible") {
  auto run = [](std::uint64_t seed) {
    Trainer t(small_run(seed));
    std::vector<double> losses;
    t.run([&](const StepLog& l) { losses.push_back(l.loss.total); });
    return std::make_pair(losses, serialize_checkpoint(t.checkpoint()));
  };
  const auto a = run(5), b = run(5), c = run(6);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("resuming at a scene boundary continues the same run") {
  auto cfg = small_run(9);
  Trainer full(cfg);
  full.run();
  Trainer first(cfg);
  for (int i = 0; i < 8; ++i) first.step();  // two scenes of four frames
  const auto ck = deserialize_checkpoint(serialize_checkpoint(first.checkpoint()));
  Trainer second(cfg);
  second.resume(ck);
  CHECK(second.steps_done() == 8);
  second.run();
  CHECK(serialize_checkpoint(second.checkpoint()) == serialize_checkpoint(full.checkpoint()));
}

TEST_CASE("one extra group doubles the logged positives") {
  for (int G : {0, 1}) {
    auto cfg = small_run(3);
    cfg.model.extra_groups = G;
    Trainer t(cfg);
    for (int i = 0; i < 4; ++i) {
      const auto log = t.step();
      CHECK(log.loss.positives == static_cast<std::size_t>(G + 1) * log.gts);
    }
  }
}

TEST_CASE("evaluation never reads the additional groups") {
  auto cfg = small_run(4);
  cfg.model.extra_groups = 1;
  Trainer t(cfg);
  t.step();
  const auto reads = t.params().extra_group_reads;
  CHECK(reads > 0);
  const auto scenes = evaluation_scenes(t.config(), 2, 123);
  const auto rep = evaluate_model(t.params(), t.config(), scenes);
  CHECK(t.params().extra_group_reads == reads);
  CHECK(rep.map >= 0.0);
}

TEST_CASE("non-finite loss names the offending term") {
  Trainer t(small_run(2));
  for (auto& b : t.params().head.cls.biases.back()->value.data) b = std::numeric_limits<float>::infinity();
  try {
    t.step();
    FAIL("expected a non-finite error");
  } catch (const NonFiniteError& e) {
    CHECK(e.term().find("loss term") != std::string::npos);
    CHECK(e.step() == 0);
  }
}

TEST_CASE("micro run: 50-step loss average decreases over the first 2000 steps") {
  auto cfg = RunConfig::micro();
  cfg.optim.steps = 5000;  // schedule of the full run; stop at 2000
  Trainer t(cfg);
  std::deque<double> window;
  double sum = 0.0;
  std::vector<double> samples;
  while (t.steps_done() < 2000) {
    const auto l = t.step();
    window.push_back(l.loss.total);
    sum += l.loss.total;
    if (window.size() > 50) {
      sum -= window.front();
      window.pop_front();
    }
    if (t.steps_done() % 500 == 0 || t.steps_done() == 50) samples.push_back(sum / 50.0);
  }
  REQUIRE(samples.size() == 5);
  for (std::size_t i = 1; i < samples.size(); ++i) {
    INFO("sample " << i << ": " << samples[i - 1] << " -> " << samples[i]);
    CHECK(samples[i] < samples[i - 1]);
  }
}
