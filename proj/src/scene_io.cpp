#include "dvpe/scene_io.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dvpe {

using nlohmann::json;

namespace {

json mat_json(const HomMat4& h) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(h.matrix()(r, c));
  return a;
}

HomMat4 mat_from(const json& a) {
  if (!a.is_array() || a.size() != 16) throw std::invalid_argument("scene: expected 16 matrix entries");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = a.at(static_cast<std::size_t>(r * 4 + c)).get<double>();
  return HomMat4::from_matrix(m);
}

constexpr int kSceneVersion = 1;

}  // namespace

std::string scene_to_json(const Scene& s) {
  json j;
  j["version"] = s.version;
  j["rig"] = json::array();
  for (const auto& c : s.rig)
    j["rig"].push_back({{"intrinsics", {c.intr.fx, c.intr.fy, c.intr.cx, c.intr.cy}},
                        {"extrinsic", mat_json(c.world_to_cam)},
                        {"feat_h", c.feat_h},
                        {"feat_w", c.feat_w},
                        {"depth_bins", c.depths}});
  j["frames"] = json::array();
  for (const auto& f : s.frames) {
    json fr{{"timestamp", f.timestamp}, {"ego", mat_json(f.ego_to_world)}, {"boxes", json::array()}};
    for (const auto& b : f.boxes)
      fr["boxes"].push_back({{"center", {b.center.x(), b.center.y(), b.center.z()}},
                             {"size", {b.size.x(), b.size.y(), b.size.z()}},
                             {"yaw", b.yaw},
                             {"velocity", {b.velocity.x(), b.velocity.y()}},
                             {"class", b.label}});
    j["frames"].push_back(std::move(fr));
  }
  return j.dump(1);
}

Scene scene_from_json(const std::string& text) {
  const json j = json::parse(text);
  Scene s;
  s.version = j.at("version").get<int>();
  if (s.version != kSceneVersion) throw std::invalid_argument("scene: unsupported version " + std::to_string(s.version));
  for (const auto& c : j.at("rig")) {
    CameraModel cam;
    const auto in = c.at("intrinsics").get<std::vector<double>>();
    if (in.size() != 4) throw std::invalid_argument("scene: intrinsics need 4 values");
    cam.intr = {in[0], in[1], in[2], in[3]};
    cam.world_to_cam = mat_from(c.at("extrinsic"));
    cam.feat_h = c.at("feat_h").get<int>();
    cam.feat_w = c.at("feat_w").get<int>();
    cam.depths = c.at("depth_bins").get<std::vector<double>>();
    cam.validate();
    s.rig.push_back(std::move(cam));
  }
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& f : j.at("frames")) {
    SceneFrame fr;
    fr.timestamp = f.at("timestamp").get<double>();
    if (!(fr.timestamp > last)) throw std::invalid_argument("scene: timestamps must increase");
    last = fr.timestamp;
    fr.ego_to_world = mat_from(f.at("ego"));
    for (const auto& b : f.at("boxes")) {
      WorldBox w;
      const auto c = b.at("center").get<std::vector<double>>();
      const auto sz = b.at("size").get<std::vector<double>>();
      const auto v = b.at("velocity").get<std::vector<double>>();
      if (c.size() != 3 || sz.size() != 3 || v.size() != 2) throw std::invalid_argument("scene: malformed box");
      w.center = {c[0], c[1], c[2]};
      w.size = {sz[0], sz[1], sz[2]};
      w.yaw = b.at("yaw").get<double>();
      w.velocity = {v[0], v[1]};
      w.label = b.at("class").get<int>();
      w.score = 1.0;
      fr.boxes.push_back(std::move(w));
    }
    s.frames.push_back(std::move(fr));
  }
  return s;
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("scene: cannot write " + path);
  f << scene_to_json(scene) << "\n";
}

Scene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("scene: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return scene_from_json(ss.str());
}

std::string metrics_to_json(const MetricsReport& r) {
  json j{{"thresholds", r.thresholds},
         {"ap_by_threshold", r.ap_by_threshold},
         {"mAP", r.map},
         {"mATE", r.mate},
         {"mAOE", r.maoe},
         {"mAVE", r.mave},
         {"true_positives", r.true_positives}};
  json pc = json::object();
  for (const auto& [c, m] : r.per_class)
    pc[std::to_string(c)] = {{"ap", m.ap}, {"mean_ap", m.mean_ap}, {"gts", m.gts}, {"tps", m.tps}};
  j["per_class"] = pc;
  return j.dump(2);
}

}  // namespace dvpe
