#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "dvpe/bench.hpp"
#include "dvpe/metrics.hpp"
#include "dvpe/scene_io.hpp"
#include "dvpe/sim.hpp"
#include "model_support.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <random>

using namespace dvpe;

namespace {

WorldBox gt_box(double x, double y, int label, double yaw = 0.0) {
  WorldBox b;
  b.center = Vec3(x, y, 0.8);
  b.size = class_prior_size(label);
  b.yaw = yaw;
  b.label = label;
  b.score = 1.0;
  return b;
}

// AP from first principles: interpolated precision at each recall level is
// the best precision over every score cut-off reaching that recall.
double reference_ap(const std::vector<FrameDetections>& frames, int label, double thr) {
  struct Item {
    double score;
    std::size_t f, i;
  };
  std::vector<Item> items;
  std::size_t ngt = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i)
      if (frames[f].preds[i].label == label) items.push_back({frames[f].preds[i].score, f, i});
    for (const auto& g : frames[f].gts) ngt += g.label == label;
  }
  if (ngt == 0) return 0.0;
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].gts.size(), false);
  std::vector<int> tp;
  for (const auto& it : items) {
    const auto& p = frames[it.f].preds[it.i];
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < frames[it.f].gts.size(); ++j) {
      const auto& g = frames[it.f].gts[j];
      if (g.label != label || used[it.f][j]) continue;
      const double d = std::hypot(p.center.x() - g.center.x(), p.center.y() - g.center.y());
      if (d < bd) bd = d, best = static_cast<int>(j);
    }
    const bool hit = best >= 0 && bd <= thr;
    if (hit) used[it.f][static_cast<std::size_t>(best)] = true;
    tp.push_back(hit);
  }
  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double best = 0.0;
    int cum = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
      cum += tp[k];
      const double rec = static_cast<double>(cum) / static_cast<double>(ngt);
      if (rec >= r / 100.0 - 1e-12) best = std::max(best, static_cast<double>(cum) / static_cast<double>(k + 1));
    }
    ap += best;
  }
  return ap / 101.0;
}

Scene axis_scene() {
  const auto cam = testing::forward_camera(15, 15, 8);
  Scene s;
  s.rig = {cam};
  SceneFrame f;
  // camera sits at (0.5, 0, 1.5) looking along +x
  f.boxes.push_back(gt_box(15.5, 0.0, 0));
  f.boxes.back().center.z() = 1.5;
  s.frames.push_back(f);
  return s;
}

std::vector<Vec3> corners(const WorldBox& b) {
  std::vector<Vec3> out;
  const auto r = make_rotation_z(b.yaw);
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        out.push_back(b.center + r * Vec3(0.5 * sx * b.size.x(), 0.5 * sy * b.size.y(), 0.5 * sz * b.size.z()));
  return out;
}

}  // namespace

TEST_CASE("empty scenes render to zero") {
  SimConfig c;
  c.min_boxes = c.max_boxes = 0;
  c.noise = 0.0;
  std::mt19937_64 rng(1);
  const auto s = generate_scene(rng, c);
  REQUIRE(s.frames.size() == static_cast<std::size_t>(c.frames));
  for (const auto& f : s.frames) CHECK(f.boxes.empty());
  for (std::size_t v = 0; v < s.rig.size(); ++v) {
    const auto feat = render_features(s, v, 0, rng, 0.0, c);
    for (double x : feat.data) CHECK(x == 0.0);
    CHECK(oracle_2d_proposals(s, v, 0, rng, c).empty());
  }
}

TEST_CASE("static configuration repeats ground truth") {
  SimConfig c;
  c.max_speed = 0.0;
  c.ego_max_speed = 0.0;
  c.ego_max_yaw_rate = 0.0;
  std::mt19937_64 rng(2);
  const auto s = generate_scene(rng, c);
  const auto first = boxes_in_ego(s, 0);
  REQUIRE(!first.empty());
  for (std::size_t f = 1; f < s.frames.size(); ++f) {
    const auto now = boxes_in_ego(s, f);
    REQUIRE(now.size() == first.size());
    for (std::size_t i = 0; i < now.size(); ++i) {
      CHECK((now[i].center - first[i].center).norm() < 1e-12);
      CHECK(now[i].yaw == doctest::Approx(first[i].yaw));
    }
  }
}

TEST_CASE("generated scenes respect their invariants") {
  SimConfig c;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = generate_scene(rng, c);
    REQUIRE(s.rig.size() == 6);
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      if (f > 0) CHECK(s.frames[f].timestamp > s.frames[f - 1].timestamp);
      for (const auto& b : boxes_in_ego(s, f)) {
        bool seen = false;
        for (const auto& cam : s.rig) {
          const auto p = project(cam, b.center);
          seen = seen || (p && p->depth > 0 && p->u >= 0 && p->u < cam.feat_w && p->v >= 0 && p->v < cam.feat_h);
        }
        CHECK(seen);
        const double r = b.center.head<2>().norm();
        CHECK(r >= 0.8 * c.min_range);
        CHECK(r <= 1.2 * c.max_range);
      }
    }
  }
}

TEST_CASE("box on the optical axis peaks at the principal point") {
  const auto s = axis_scene();
  auto c = testing::sim_for(s, 3);
  std::mt19937_64 rng(4);
  const auto f = render_features(s, 0, 0, rng, 0.0, c);
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t t = 0; t < f.rows(); ++t) {
    double n = 0.0;
    for (std::size_t k = 0; k < f.cols(); ++k) n += f.at(t, k) * f.at(t, k);
    if (n > best_norm) best_norm = n, best = t;
  }
  CHECK(best == 7 * 15 + 7);
  // far from the box: no signal
  double corner = 0.0;
  for (std::size_t k = 0; k < f.cols(); ++k) corner += std::abs(f.at(0, k));
  CHECK(corner == 0.0);
}

TEST_CASE("noise-free rendering is bitwise reproducible") {
  SimConfig c;
  c.noise = 0.0;
  std::mt19937_64 g(5);
  const auto s = generate_scene(g, c);
  std::mt19937_64 r1(1), r2(999);
  for (std::size_t v = 0; v < s.rig.size(); ++v)
    CHECK(render_features(s, v, 1, r1, 0.0, c).data == render_features(s, v, 1, r2, 0.0, c).data);
}

TEST_CASE("noise-free proposals are exact projections") {
  SimConfig c;
  c.proposal_jitter = 0.0;
  c.proposal_noise = 0.0;
  c.class_confusion = 0.0;
  std::mt19937_64 g(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = generate_scene(g, c);
    const auto boxes = boxes_in_ego(s, 0);
    for (std::size_t v = 0; v < s.rig.size(); ++v) {
      const auto& cam = s.rig[v];
      const auto props = oracle_2d_proposals(s, v, 0, g, c);
      std::size_t visible = 0;
      for (const auto& b : boxes) {
        const auto p = project(cam, b.center);
        visible += p && p->depth > 0.1 && p->u >= 0 && p->u < cam.feat_w && p->v >= 0 && p->v < cam.feat_h;
      }
      CHECK(props.size() == visible);
      for (const auto& p : props) {
        REQUIRE(p.gt_index >= 0);
        const auto& b = boxes[static_cast<std::size_t>(p.gt_index)];
        double u0 = cam.feat_w, v0 = cam.feat_h, u1 = 0, v1 = 0;
        for (const auto& c3 : corners(b)) {
          const auto pr = project(cam, c3);
          if (!pr || pr->depth <= 0.1) continue;
          u0 = std::min(u0, pr->u), u1 = std::max(u1, pr->u);
          v0 = std::min(v0, pr->v), v1 = std::max(v1, pr->v);
        }
        CHECK(p.u0 == std::clamp(u0, 0.0, double(cam.feat_w)));
        CHECK(p.u1 == std::clamp(u1, 0.0, double(cam.feat_w)));
        CHECK(p.v0 == std::clamp(v0, 0.0, double(cam.feat_h)));
        CHECK(p.v1 == std::clamp(v1, 0.0, double(cam.feat_h)));
        for (int k = 0; k < c.classes; ++k) CHECK(p.roi.class_scores[static_cast<std::size_t>(k)] == (k == b.label ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("boxes behind a camera yield no proposals there") {
  auto s = axis_scene();
  s.frames[0].boxes[0].center = Vec3(-10, 0, 1.0);
  auto c = testing::sim_for(s, 3);
  std::mt19937_64 rng(7);
  CHECK(oracle_2d_proposals(s, 0, 0, rng, c).empty());
}

TEST_CASE("false positive rate matches its expectation") {
  SimConfig c;
  c.false_positive_rate = 0.2;
  std::mt19937_64 g(8);
  std::size_t gts = 0, extra = 0;
  for (int frame = 0; frame < 1000; ++frame) {
    const auto s = generate_scene(g, c);
    for (std::size_t v = 0; v < s.rig.size(); ++v)
      for (const auto& p : oracle_2d_proposals(s, v, 0, g, c)) (p.gt_index < 0 ? extra : gts)++;
  }
  const double expected = 0.2 * static_cast<double>(gts);
  CHECK(std::abs(static_cast<double>(extra) - expected) < 0.1 * expected);
}

TEST_CASE("metric examples") {
  std::vector<FrameDetections> perfect(1);
  perfect[0].gts = {gt_box(10, 0, 0, 0.3), gt_box(-5, 8, 1, -1.0)};
  perfect[0].preds = perfect[0].gts;
  const auto r = evaluate(perfect, 3);
  CHECK(r.map == doctest::Approx(1.0));
  CHECK(r.mate == 0.0);
  CHECK(r.maoe == 0.0);

  std::vector<FrameDetections> empty(1);
  empty[0].gts = perfect[0].gts;
  CHECK(evaluate(empty, 3).map == 0.0);

  std::vector<FrameDetections> off(1);
  off[0].gts = {gt_box(10, 0, 0)};
  off[0].preds = {gt_box(11.5, 0, 0)};
  const auto o = evaluate(off, 1);
  CHECK(o.ap_by_threshold == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  CHECK(o.map == doctest::Approx(0.5));
  CHECK(o.mate == doctest::Approx(1.5));
  CHECK(o.true_positives == 1);
}

TEST_CASE("AP agrees with a first-principles computation") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-8, 8), s(0, 1), jit(-2.5, 2.5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<FrameDetections> frames(1 + rng() % 3);
    for (auto& f : frames) {
      const int n = static_cast<int>(rng() % 6);
      for (int i = 0; i < n; ++i) f.gts.push_back(gt_box(u(rng), u(rng), static_cast<int>(rng() % 2)));
      const int m = static_cast<int>(rng() % 7);
      for (int i = 0; i < m; ++i) {
        WorldBox p = !f.gts.empty() && rng() % 3 ? f.gts[rng() % f.gts.size()] : gt_box(u(rng), u(rng), 0);
        p.center.x() += jit(rng);
        p.center.y() += jit(rng);
        p.score = trial % 4 == 0 ? 0.5 : s(rng);  // ties in some trials
        if (rng() % 5 == 0) p.label = 1 - p.label;
        f.preds.push_back(p);
      }
    }
    const auto rep = evaluate(frames, 2);
    for (int c = 0; c < 2; ++c) {
      auto it = rep.per_class.find(c);
      for (std::size_t t = 0; t < rep.thresholds.size(); ++t) {
        const double want = reference_ap(frames, c, rep.thresholds[t]);
        const double got = it == rep.per_class.end() ? 0.0 : it->second.ap[t];
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
      }
    }
    CHECK(rep.map >= 0.0);
    CHECK(rep.map <= 1.0);
  }
}

TEST_CASE("attention cost benchmark counts") {
  BenchCase one;
  one.views = 1;
  one.tokens = 300;
  one.queries = 40;
  one.trials = 3;
  BenchCase six = one;
  six.views = 6;
  six.tokens = 1536;
  six.queries = 64;
  six.trials = 20;
  BenchCase adv = one;
  adv.views = 6;
  adv.layout = TokenLayout::OneWedge;
  const auto rows = bench_attention({one, six, adv}, 11, 16, 2, false);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].divided_interactions == rows[0].global_interactions);
  CHECK(rows[0].padding_overhead == 1.0);
  CHECK(std::abs(rows[1].divided_interactions / rows[1].global_interactions - 1.0 / 6.0) < 0.05 / 6.0);
  CHECK(rows[2].padding_overhead == doctest::Approx(6.0));
  const auto json = bench_to_json(rows);
  CHECK(json.find("padding_overhead") != std::string::npos);
}

TEST_CASE("scene files round trip bitwise") {
  SimConfig c;
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = generate_scene(rng, c);
    const auto text = scene_to_json(s);
    const auto back = scene_from_json(text);
    CHECK(scene_to_json(back) == text);
    REQUIRE(back.frames.size() == s.frames.size());
    REQUIRE(back.rig.size() == s.rig.size());
    for (std::size_t v = 0; v < s.rig.size(); ++v) {
      CHECK(std::memcmp(back.rig[v].world_to_cam.matrix().data(), s.rig[v].world_to_cam.matrix().data(),
                        16 * sizeof(double)) == 0);
      CHECK(back.rig[v].depths == s.rig[v].depths);
      CHECK(back.rig[v].intr.fx == s.rig[v].intr.fx);
    }
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      CHECK(back.frames[f].timestamp == s.frames[f].timestamp);
      const auto& a = s.frames[f].boxes;
      const auto& b = back.frames[f].boxes;
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].center == b[i].center);
        CHECK(a[i].size == b[i].size);
        CHECK(a[i].yaw == b[i].yaw);
        CHECK(a[i].velocity == b[i].velocity);
        CHECK(a[i].label == b[i].label);
      }
    }
  }
  CHECK_THROWS(scene_from_json("{\"version\": 1}"));
  CHECK_THROWS(scene_from_json("not json"));
}
