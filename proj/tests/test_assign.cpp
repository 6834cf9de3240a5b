#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "dvpe/assign.hpp"
#include "dvpe/num/gradcheck.hpp"
#include "model_support.hpp"
#include "support.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

using namespace dvpe;

namespace {

// Minimum over all injective maps, each candidate summed in ascending gt order.
double brute_force(const Eigen::MatrixXd& c) {
  const int rows = static_cast<int>(c.rows()), cols = static_cast<int>(c.cols());
  double best = std::numeric_limits<double>::infinity();
  if (rows >= cols) {
    std::vector<int> pick(static_cast<std::size_t>(cols));
    std::vector<bool> used(static_cast<std::size_t>(rows), false);
    std::function<void(int)> rec = [&](int j) {
      if (j == cols) {
        double s = 0.0;
        for (int k = 0; k < cols; ++k) s += c(pick[static_cast<std::size_t>(k)], k);
        best = std::min(best, s);
        return;
      }
      for (int i = 0; i < rows; ++i) {
        if (used[static_cast<std::size_t>(i)]) continue;
        used[static_cast<std::size_t>(i)] = true;
        pick[static_cast<std::size_t>(j)] = i;
        rec(j + 1);
        used[static_cast<std::size_t>(i)] = false;
      }
    };
    rec(0);
  } else {
    // every pred matched; choose which gts
    std::vector<int> cols_of(static_cast<std::size_t>(rows));
    std::vector<bool> used(static_cast<std::size_t>(cols), false);
    std::function<void(int)> rec = [&](int i) {
      if (i == rows) {
        std::vector<std::pair<int, int>> pr;
        for (int k = 0; k < rows; ++k) pr.emplace_back(cols_of[static_cast<std::size_t>(k)], k);
        std::sort(pr.begin(), pr.end());
        double s = 0.0;
        for (auto [g, p] : pr) s += c(p, g);
        best = std::min(best, s);
        return;
      }
      for (int j = 0; j < cols; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        used[static_cast<std::size_t>(j)] = true;
        cols_of[static_cast<std::size_t>(i)] = j;
        rec(i + 1);
        used[static_cast<std::size_t>(j)] = false;
      }
    };
    rec(0);
  }
  return best;
}

// Number of assignments within 1e-9 of the optimum (rows >= cols).
int optimal_count(const Eigen::MatrixXd& c) {
  const double best = brute_force(c);
  const int rows = static_cast<int>(c.rows()), cols = static_cast<int>(c.cols());
  int count = 0;
  std::vector<bool> used(static_cast<std::size_t>(rows), false);
  std::function<void(int, double)> rec = [&](int j, double s) {
    if (j == cols) {
      count += s <= best + 1e-9;
      return;
    }
    for (int i = 0; i < rows; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      used[static_cast<std::size_t>(i)] = true;
      rec(j + 1, s + c(i, j));
      used[static_cast<std::size_t>(i)] = false;
    }
  };
  rec(0, 0.0);
  return count;
}

void check_assignment_valid(const Assignment& a, int rows, int cols) {
  std::vector<int> pu(static_cast<std::size_t>(rows), 0), gu(static_cast<std::size_t>(cols), 0);
  for (auto [p, g] : a.pairs) {
    CHECK(++pu[static_cast<std::size_t>(p)] == 1);
    CHECK(++gu[static_cast<std::size_t>(g)] == 1);
  }
  CHECK(a.pairs.size() + a.unmatched_gts.size() == static_cast<std::size_t>(cols));
  CHECK(a.pairs.size() == static_cast<std::size_t>(std::min(rows, cols)));
}

WorldBox box_at(double x, double y, int label, double logit_hi = 20.0, int classes = 3) {
  WorldBox b;
  b.center = Vec3(x, y, 0.5);
  b.size = class_prior_size(label);
  b.yaw = 0.2 * x;
  b.velocity = {0.1 * y, -0.3};
  b.label = label;
  b.logits.assign(static_cast<std::size_t>(classes), -logit_hi);
  b.logits[static_cast<std::size_t>(label)] = logit_hi;
  b.score = 1.0;
  return b;
}

// Hand-built decoder output: one layer per entry of `layers`, queries
// split into groups by `group`.
struct FakeOutput {
  num::Tape<double> tape;
  DecoderOutput<double> out;

  FakeOutput(const std::vector<std::vector<WorldBox>>& layers, std::vector<int> group, int V = 6) {
    out.query_group = std::move(group);
    for (const auto& preds : layers) {
      const std::size_t M = preds.size();
      num::Tensor<double> c({M, 3}), r({M, kRegDim}), l({M, preds[0].logits.size()});
      LayerOutput<double> lo;
      for (std::size_t i = 0; i < M; ++i) {
        const double th = virtual_rotation(group_index(preds[i].center, V, 0.0), V, 0.0);
        lo.theta.push_back(th);
        const auto lb = world_to_local(preds[i], Vec3::Zero(), th);
        for (int k = 0; k < 3; ++k) {
          c.at(i, static_cast<std::size_t>(k)) = preds[i].center[k];
          r.at(i, kRegCenter + static_cast<std::size_t>(k)) = lb.center_offset[k];
          r.at(i, kRegLogSize + static_cast<std::size_t>(k)) = lb.log_size[k];
        }
        r.at(i, kRegYaw) = std::sin(lb.yaw);
        r.at(i, kRegYaw + 1) = std::cos(lb.yaw);
        r.at(i, kRegVel) = lb.velocity[0];
        r.at(i, kRegVel + 1) = lb.velocity[1];
        for (std::size_t k = 0; k < l.cols(); ++k) l.at(i, k) = preds[i].logits[k];
      }
      lo.center = tape.constant(std::move(c));
      lo.reg = tape.constant(std::move(r));
      lo.logits = tape.constant(std::move(l));
      out.layers.push_back(std::move(lo));
    }
  }
};

std::vector<WorldBox> random_boxes(std::mt19937_64& rng, std::size_t n, double logit_scale = 2.0) {
  std::uniform_real_distribution<double> u(-25, 25), lg(-logit_scale, logit_scale);
  std::vector<WorldBox> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto b = box_at(u(rng), u(rng), static_cast<int>(rng() % 3));
    for (auto& x : b.logits) x = lg(rng);
    b.velocity = {0.1 * u(rng), 0.1 * u(rng)};
    b.yaw = 0.1 * u(rng);
    b.size *= 1.0 + 0.01 * u(rng);
    out.push_back(b);
  }
  return out;
}

}  // namespace

TEST_CASE("hungarian small examples") {
  Eigen::MatrixXd c(2, 2);
  c << 1, 3, 2, 1;
  const auto a = hungarian(c);
  CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
  CHECK(a.total_cost == 2.0);

  Eigen::MatrixXd one(1, 1);
  one << 4.5;
  const auto b = hungarian(one);
  CHECK(b.pairs == std::vector<std::pair<int, int>>{{0, 0}});
  CHECK(b.total_cost == 4.5);

  Eigen::MatrixXd bad(2, 2);
  bad << 1, std::numeric_limits<double>::quiet_NaN(), 0, 0;
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);

  // more gts than preds
  Eigen::MatrixXd wide(1, 3);
  wide << 5, 1, 7;
  const auto w = hungarian(wide);
  CHECK(w.pairs == std::vector<std::pair<int, int>>{{0, 1}});
  CHECK(w.unmatched_gts == std::vector<int>{0, 2});
}

TEST_CASE("hungarian equals brute force on 200 random matrices") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 7), cols = 1 + static_cast<int>(rng() % 7);
    Eigen::MatrixXd c(rows, cols);
    const bool integer = trial % 2 == 1;  // ties
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) c(i, j) = integer ? static_cast<double>(rng() % 4) : u(rng);
    const auto a = hungarian(c);
    INFO("trial " << trial << " " << rows << "x" << cols);
    check_assignment_valid(a, rows, cols);
    CHECK(a.total_cost == brute_force(c));
    double s = 0.0;
    for (auto [p, g] : a.pairs) s += c(p, g);
    CHECK(s == a.total_cost);
  }
}

TEST_CASE("hungarian is deterministic under ties") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(4, 3);
  const auto a = hungarian(c), b = hungarian(c);
  CHECK(a.pairs == b.pairs);
}

TEST_CASE("pairwise cost") {
  const std::vector<WorldBox> gts{box_at(10, 0, 1), box_at(-5, 5, 2)};
  std::vector<WorldBox> preds{box_at(10, 0, 1), box_at(9, 1, 1, 0.5), box_at(-5, 5, 0)};
  const auto c = pairwise_cost(preds, gts);
  CHECK(c(0, 0) < c(1, 0));
  CHECK(c(0, 0) < c(2, 0));

  // mirror instance
  const std::vector<WorldBox> mg{box_at(3, 4, 0, 1.0), box_at(3, -4, 0, 1.0)};
  const std::vector<WorldBox> mp{box_at(1, 2, 0, 0.3), box_at(1, -2, 0, 0.3)};
  const auto m = pairwise_cost(mp, mg);
  CHECK(m(0, 0) == m(1, 1));
  CHECK(m(0, 1) == m(1, 0));

  std::mt19937_64 rng(2);
  const auto rp = random_boxes(rng, 6), rg = random_boxes(rng, 4);
  CostWeights w{1.5, 0.7};
  const auto rc = pairwise_cost(rp, rg, w);
  for (std::size_t i = 0; i < rp.size(); ++i)
    for (std::size_t j = 0; j < rg.size(); ++j) {
      const double p = 1.0 / (1.0 + std::exp(-rp[i].logits[static_cast<std::size_t>(rg[j].label)]));
      const double l1 = std::abs(rp[i].center.x() - rg[j].center.x()) + std::abs(rp[i].center.y() - rg[j].center.y()) +
                        std::abs(rp[i].center.z() - rg[j].center.z());
      CHECK(rc(static_cast<long>(i), static_cast<long>(j)) == doctest::Approx(-1.5 * p + 0.7 * l1).epsilon(1e-14));
    }
}

TEST_CASE("one-to-many assignment counts") {
  std::mt19937_64 rng(3);
  const auto gts = random_boxes(rng, 5);
  const auto g0 = random_boxes(rng, 8), g1 = random_boxes(rng, 6);
  const auto single = one_to_many_assign({g0}, gts);
  REQUIRE(single.size() == 1);
  CHECK(single[0].pairs == hungarian(pairwise_cost(g0, gts)).pairs);
  const auto both = one_to_many_assign({g0, g1}, gts);
  CHECK(both[0].pairs.size() + both[1].pairs.size() == 10);
  const auto swapped = one_to_many_assign({g1, g0}, gts);
  CHECK(swapped[0].pairs == both[1].pairs);
  CHECK(swapped[1].pairs == both[0].pairs);
}

TEST_CASE("one extra group of 900 doubles the positive pairs") {
  const auto rig = std::vector<CameraModel>{testing::forward_camera(4, 3, 4)};
  auto scene = testing::tiny_scene(rig, 3);
  for (int i = 0; i < 5; ++i) {
    auto b = scene.frames[0].boxes[0];
    b.center = Vec3(8.0 + 3 * i, 4.0 - 2 * i, 0.3);
    b.label = i % 3;
    scene.frames[0].boxes.push_back(b);
  }
  const auto sim = testing::sim_for(scene, 3);
  const auto gts = boxes_in_ego(scene, 0);
  for (int G : {0, 1}) {
    auto cfg = testing::model_for(sim, 8, 900, 1);
    cfg.layers = 1;
    cfg.extra_groups = G;
    cfg.group_queries = 900;
    cfg.temporal = false;
    auto p = ModelParams<float>::create(cfg, 3);
    std::mt19937_64 rng(1);
    const auto in = build_frame_input<float>(scene, 0, rng, sim);
    num::Tape<float> t;
    const auto out = decoder_forward(t, *p, in, {});
    CHECK(out.query_group.size() == static_cast<std::size_t>(900 * (G + 1)));
    const auto loss = detection_loss(t, out, gts, LossConfig{});
    CHECK(loss.breakdown.positives == static_cast<std::size_t>(G + 1) * gts.size());
  }
}

TEST_CASE("focal loss closed form") {
  num::Tape<double> t;
  num::Tensor<double> tgt({1, 1}, 1.0);
  const auto f = num::sigmoid_focal_loss(t.constant(num::Tensor<double>({1, 1}, 0.0)), tgt, 0.25, 2.0);
  CHECK(f.item() == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(f.item() == doctest::Approx(0.04332).epsilon(1e-4));
}

TEST_CASE("perfect predictions give zero box loss") {
  const std::vector<WorldBox> gts{box_at(10, 2, 0), box_at(-4, 12, 2)};
  auto bg = box_at(30, -30, 1);
  std::fill(bg.logits.begin(), bg.logits.end(), -20.0);
  FakeOutput fo({{gts[0], bg, gts[1]}, {gts[0], bg, gts[1]}}, {0, 0, 0});
  const auto loss = detection_loss(fo.tape, fo.out, gts, LossConfig{});
  CHECK(loss.breakdown.box < 1e-12);
  CHECK(loss.breakdown.cls < 1e-3);
  CHECK(loss.breakdown.positives == 2);
  CHECK(loss.breakdown.l2d == 0.0);
  CHECK(loss.breakdown.l3d_dn == 0.0);
}

TEST_CASE("zero gts leave a classification-only loss") {
  std::mt19937_64 rng(4);
  FakeOutput fo({random_boxes(rng, 4)}, {0, 0, 0, 0});
  const auto loss = detection_loss(fo.tape, fo.out, {}, LossConfig{});
  CHECK(loss.breakdown.box == 0.0);
  CHECK(loss.breakdown.cls > 0.0);
  CHECK(std::isfinite(loss.breakdown.total));
}

TEST_CASE("lambda3 scales the additional group linearly") {
  std::mt19937_64 rng(5);
  const auto gts = random_boxes(rng, 3);
  const auto preds = random_boxes(rng, 8);
  std::vector<int> group{0, 0, 0, 0, 1, 1, 1, 1};
  FakeOutput fo({preds}, group);
  LossConfig a, b;
  b.lambda3 = 2.0;
  const auto la = detection_loss(fo.tape, fo.out, gts, a);
  const auto lb = detection_loss(fo.tape, fo.out, gts, b);
  CHECK(la.breakdown.l3d_aux > 0.0);
  CHECK(lb.breakdown.l3d_aux == la.breakdown.l3d_aux);
  CHECK(lb.breakdown.total - la.breakdown.total == doctest::Approx(la.breakdown.l3d_aux).epsilon(1e-12));
  CHECK(la.breakdown.total == doctest::Approx(la.breakdown.l3d + la.breakdown.l3d_aux).epsilon(1e-12));
}

TEST_CASE("loss is invariant to gt and prediction order") {
  std::mt19937_64 rng(6);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto gts = random_boxes(rng, 4);
    auto preds = random_boxes(rng, 7);
    // L1 costs tie often; the invariant holds when the optimum is unique
    FakeOutput fa({preds}, std::vector<int>(7, 0));
    const auto cost = pairwise_cost(decode_boxes(fa.out.layers[0], 7), gts);
    if (optimal_count(cost) != 1) continue;
    ++checked;
    const double base = detection_loss(fa.tape, fa.out, gts, LossConfig{}).breakdown.total;
    std::shuffle(gts.begin(), gts.end(), rng);
    std::shuffle(preds.begin(), preds.end(), rng);
    FakeOutput fb({preds}, std::vector<int>(7, 0));
    const double shuffled = detection_loss(fb.tape, fb.out, gts, LossConfig{}).breakdown.total;
    CHECK(shuffled == doctest::Approx(base).epsilon(1e-12));
  }
  CHECK(checked >= 10);
}

TEST_CASE("loss gradient with respect to predictions") {
  std::mt19937_64 rng(7);
  const auto gts = random_boxes(rng, 3);
  const auto preds = random_boxes(rng, 5);
  FakeOutput fo({preds, preds}, {0, 0, 0, 1, 1});
  std::vector<num::Tensor<double>> inputs;
  for (const auto& l : fo.out.layers) {
    inputs.push_back(l.center.value());
    inputs.push_back(l.reg.value());
    inputs.push_back(l.logits.value());
  }
  const auto r = num::grad_check(
      [&](num::Tape<double>& t, const std::vector<testing::VarD>& x) {
        DecoderOutput<double> out = fo.out;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
          out.layers[l].center = x[3 * l];
          out.layers[l].reg = x[3 * l + 1];
          out.layers[l].logits = x[3 * l + 2];
        }
        LossConfig cfg;
        cfg.lambda3 = 0.7;
        return detection_loss(t, out, gts, cfg).total;
      },
      inputs);
  INFO("input " << r.worst_input << " index " << r.worst_index << " a=" << r.analytic << " n=" << r.numeric);
  CHECK(r.max_rel_err < 1e-4);
}
