#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "dvpe/memory.hpp"
#include "support.hpp"

#include <algorithm>
#include <numeric>

using namespace dvpe;

namespace {

MemoryEntry decoder_entry(const Vec3& p, double score) {
  MemoryEntry e;
  e.kind = EntryKind::Decoder;
  e.embedding = {score, 1.0};
  e.point = p;
  e.score = score;
  return e;
}

HomMat4 random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-20, 20), a(-3.2, 3.2);
  return HomMat4::translation(Vec3(u(rng), u(rng), 0.1 * u(rng))) * HomMat4::rotation_z(a(rng));
}

struct Encoder {
  num::ParamStore<double> store;
  RoiEncoder<double> enc;
  Encoder() {
    num::Rng rng(4);
    enc = RoiEncoder<double>::create(store, "roi", 6, 3, 8, 12, 16, rng);
  }
  // Point head ignores its input and emits `raw`.
  void freeze(double un, double vn, double depth) {
    auto& w = enc.point.weights.back()->value.data;
    std::fill(w.begin(), w.end(), 0.0);
    enc.point.biases.back()->value.data = {un, vn, depth};
  }
};

RoiInput roi_at(const HomMat4& world_to_cam) {
  RoiInput r;
  r.feature = {0.1, -0.2, 0.3, 0.0, 0.5, 1.0};
  r.class_scores = {0.0, 1.0, 0.0};
  r.camera.intr = {4.0, 4.0, 2.5, 1.5};
  r.camera.feat_w = 5;
  r.camera.feat_h = 3;
  r.camera.world_to_cam = world_to_cam;
  return r;
}

}  // namespace

TEST_CASE("topk selection") {
  const std::vector<double> s{0.9, 0.1, 0.5};
  auto idx = topk_select(s, 2);
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<std::size_t>{0, 2});
  CHECK(topk_select(s, 0).empty());
  CHECK(topk_select(s, 10).size() == 3);
  const std::vector<double> tie{1.0, 1.0, 1.0};
  CHECK(topk_select(tie, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("topk matches a full sort") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 40, k = rng() % (n + 1);
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    std::vector<std::size_t> want(order.begin(), order.begin() + static_cast<long>(k));
    auto got = topk_select(s, k);
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    CHECK(got == want);
  }
}

TEST_CASE("queue keeps four frames in FIFO order") {
  MemoryQueue q;
  for (int f = 0; f < 5; ++f) q.push_frame({decoder_entry(Vec3(f, 0, 0), 1.0)}, {}, HomMat4(), f * 0.5);
  CHECK(q.size() == 4);
  CHECK(q.frames().front().timestamp == 0.5);
  CHECK(q.frames().back().timestamp == 2.0);
  q.push_frame({}, {}, HomMat4(), 3.0);
  CHECK(q.size() == 4);
  CHECK(q.frames().back().entries.empty());
  CHECK_THROWS(q.push_frame({}, {}, HomMat4(), 3.0));
}

TEST_CASE("per-frame counts are capped") {
  MemoryQueue q;
  std::vector<MemoryEntry> dec, roi;
  for (int i = 0; i < 300; ++i) {
    dec.push_back(decoder_entry(Vec3::Zero(), i));
    auto r = decoder_entry(Vec3::Zero(), i);
    r.kind = EntryKind::Roi;
    r.roi = RoiInput{};
    roi.push_back(r);
  }
  q.push_frame(dec, roi, HomMat4(), 0.0);
  CHECK(q.entry_count() == 256 + 128);
  double min_roi = 1e9;
  for (const auto& e : q.frames().front().entries)
    if (e.kind == EntryKind::Roi) min_roi = std::min(min_roi, e.score);
  CHECK(min_roi == 300 - 128);
}

TEST_CASE("ego compensation kinematics") {
  MemoryQueue q;
  const Vec3 world(7, 3, 1);
  HomMat4 e2w;
  q.push_frame({decoder_entry(apply_homogeneous(e2w.inverse(), world), 1.0)}, {}, e2w.inverse(), 0.0);
  // stationary ego
  auto v0 = ego_compensate(q, e2w.inverse(), 0.5);
  CHECK((v0.entries[0].point - world).norm() < 1e-12);
  CHECK(v0.entries[0].dt == 0.5);
  // ego moved +2 m in x
  const auto now = HomMat4::translation(Vec3(2, 0, 0));
  auto v1 = ego_compensate(q, now.inverse(), 0.5);
  CHECK((v1.entries[0].point - Vec3(5, 3, 1)).norm() < 1e-12);
}

TEST_CASE("static points survive random ego motion") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    MemoryQueue q;
    const Vec3 world(5, -4, 0.7);
    for (int f = 0; f < 4; ++f) {
      const auto e2w = random_pose(rng);
      q.push_frame({decoder_entry(apply_homogeneous(e2w.inverse(), world), 1.0)}, {}, e2w.inverse(), f);
    }
    const auto now = random_pose(rng);
    const auto view = ego_compensate(q, now.inverse(), 4.0);
    REQUIRE(view.size() == 4);
    for (const auto& e : view.entries) CHECK((e.point - apply_homogeneous(now.inverse(), world)).norm() < 1e-9);
    // recompensating with an identity delta is a no-op
    MemoryQueue q2;
    for (const auto& e : view.entries) q2.push_frame({decoder_entry(e.point, 1.0)}, {}, now.inverse(), 10 + q2.size());
    for (const auto& e : ego_compensate(q2, now.inverse(), 20).entries)
      CHECK((e.point - apply_homogeneous(now.inverse(), world)).norm() < 1e-9);
  }
}

TEST_CASE("motion features") {
  MemoryQueue q;
  q.push_frame({decoder_entry(Vec3::Zero(), 1.0)}, {}, HomMat4(), 1.0);
  const auto now = HomMat4::translation(Vec3(1, 2, 3));
  const auto f = ego_compensate(q, now, 1.5).motion_features<double>();
  CHECK(f.shape == num::Shape{1, 13});
  CHECK(f.at(0, 0) == 0.5);
  CHECK(f.at(0, 4) == 1.0);  // row 0 translation
  CHECK(f.at(0, 8) == 2.0);
  CHECK(f.at(0, 12) == 3.0);
}

TEST_CASE("frozen RoI head lands on the optical axis") {
  Encoder e;
  e.freeze(0.5, 0.5, 5.0);
  const std::vector<RoiInput> rois{roi_at(HomMat4())};
  num::Tape<double> t;
  const auto enc = encode_roi(t, e.enc, rois);
  const auto& p = enc.point.value();
  CHECK(std::abs(p.at(0, 0) - 5.0) < 1e-12);
  CHECK(std::abs(p.at(0, 1)) < 1e-12);
  CHECK(std::abs(p.at(0, 2)) < 1e-12);
}

TEST_CASE("RoI points follow the camera extrinsic") {
  Encoder e;
  std::mt19937_64 rng(3);
  const auto cam_pose = random_pose(rng);
  const std::vector<RoiInput> rois{roi_at(HomMat4()), roi_at(cam_pose.inverse())};
  num::Tape<double> t;
  const auto enc = encode_roi(t, e.enc, rois);
  const auto& p = enc.point.value();
  const Vec3 a(p.at(0, 0), p.at(0, 1), p.at(0, 2)), b(p.at(1, 0), p.at(1, 1), p.at(1, 2));
  CHECK((apply_homogeneous(cam_pose, a) - b).norm() < 1e-9);
  // embeddings depend only on the feature and scores
  num::Tape<double> t2;
  const auto enc2 = encode_roi(t2, e.enc, rois);
  CHECK(enc.embedding.value().data == enc2.embedding.value().data);
}

TEST_CASE("RoI encoder gradients") {
  Encoder e;
  std::mt19937_64 rng(5);
  const std::vector<RoiInput> rois{roi_at(HomMat4()), roi_at(random_pose(rng).inverse())};
  std::vector<num::Param<double>*> ps;
  for (auto& p : e.store.all()) ps.push_back(&p);
  std::vector<HomMat4> tf{random_pose(rng), random_pose(rng)};
  const auto r = num::grad_check_params(
      [&](num::Tape<double>& t) {
        const auto enc = encode_roi(t, e.enc, rois);
        auto moved = transform_points(enc.point, std::span<const HomMat4>(tf));
        return num::add(testing::contract(t, moved, 1), testing::contract(t, enc.embedding, 2));
      },
      ps);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("singular relative transform is impossible by construction") {
  Mat4 bad = Mat4::Identity();
  bad(0, 0) = 0.0;
  CHECK_THROWS(HomMat4::from_matrix(bad));
}
