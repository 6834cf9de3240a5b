#include "dvpe/geom.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dvpe {

RotMat3 make_rotation_z(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("make_rotation_z: non-finite angle");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 m;
  m << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return RotMat3(m, theta);
}

RotMat3 RotMat3::operator*(const RotMat3& other) const {
  return RotMat3(m_ * other.m_, angle_ + other.angle_);
}

RotMat3 RotMat3::inverse() const { return RotMat3(m_.transpose(), -angle_); }

HomMat4 HomMat4::from_matrix(const Mat4& m) {
  if (!m.allFinite()) throw std::invalid_argument("HomMat4: non-finite entries");
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0)
    throw std::invalid_argument("HomMat4: last row must be (0,0,0,1)");
  const Mat3 r = m.topLeftCorner<3, 3>();
  const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-9) throw std::invalid_argument("HomMat4: rotation block not orthonormal");
  if (r.determinant() < 0.0) throw std::invalid_argument("HomMat4: rotation block is a reflection");
  return HomMat4(m);
}

HomMat4 HomMat4::from_rotation_translation(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return from_matrix(m);
}

HomMat4 HomMat4::translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topRightCorner<3, 1>() = t;
  return HomMat4(m);
}

HomMat4 HomMat4::rotation_z(double theta) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = make_rotation_z(theta).matrix();
  return HomMat4(m);
}

HomMat4 HomMat4::inverse() const {
  const Mat3 rt = rotation().transpose();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rt;
  m.topRightCorner<3, 1>() = -rt * translation();
  return HomMat4(m);
}

HomMat4 HomMat4::operator*(const HomMat4& rhs) const {
  Mat4 m = m_ * rhs.m_;
  m.row(3) << 0.0, 0.0, 0.0, 1.0;
  return HomMat4(m);
}

Vec3 apply_homogeneous(const HomMat4& h, const Vec3& p) {
  const Mat4& m = h.matrix();
  if (!(std::abs(m.topLeftCorner<3, 3>().determinant()) > 0.0))
    throw std::logic_error("apply_homogeneous: singular rotation block");
  return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
}

void CameraModel::validate() const {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) throw std::invalid_argument("CameraModel: focal lengths must be positive");
  if (feat_h < 1 || feat_w < 1) throw std::invalid_argument("CameraModel: feature dims must be positive");
  if (depths.empty()) throw std::invalid_argument("CameraModel: need at least one depth bin");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (!(depths[i] > 0.0)) throw std::invalid_argument("CameraModel: depth bins must be positive");
    if (i > 0 && !(depths[i] > depths[i - 1]))
      throw std::invalid_argument("CameraModel: depth bins must be strictly increasing");
  }
}

std::pair<double, double> CameraModel::token_pixel(std::size_t t) const {
  const auto row = static_cast<double>(t / static_cast<std::size_t>(feat_w));
  const auto col = static_cast<double>(t % static_cast<std::size_t>(feat_w));
  return {col + 0.5, row + 0.5};
}

Vec3 CameraModel::center_world() const { return world_to_cam.inverse().translation(); }

std::vector<double> linear_depth_bins(int count, double near, double far) {
  if (count < 1) throw std::invalid_argument("linear_depth_bins: count must be >= 1");
  std::vector<double> d(static_cast<std::size_t>(count));
  if (count == 1) {
    d[0] = far;
    return d;
  }
  for (int i = 0; i < count; ++i) d[static_cast<std::size_t>(i)] = near + (far - near) * i / (count - 1);
  return d;
}

Vec3 unproject(const Intrinsics& intr, double u, double v, double depth) {
  // image right (+u) is frustum -y, image down (+v) is frustum -z
  return {depth, -depth * (u - intr.cx) / intr.fx, -depth * (v - intr.cy) / intr.fy};
}

std::optional<Projection> project(const CameraModel& cam, const Vec3& world) {
  const Vec3 p = apply_homogeneous(cam.world_to_cam, world);
  if (p.x() <= 1e-9) return std::nullopt;
  return Projection{cam.intr.cx - cam.intr.fx * p.y() / p.x(), cam.intr.cy - cam.intr.fy * p.z() / p.x(), p.x()};
}

RayGrid discretize_rays(const CameraModel& cam, int view_index) {
  cam.validate();
  const HomMat4 cam_to_world = cam.world_to_cam.inverse();
  RayGrid g;
  g.depth_bins = cam.depths.size();
  const std::size_t n = cam.tokens();
  g.points.reserve(n * g.depth_bins);
  g.furthest.reserve(n);
  g.view.assign(n, view_index);
  for (std::size_t t = 0; t < n; ++t) {
    const auto [u, v] = cam.token_pixel(t);
    for (double d : cam.depths) g.points.push_back(apply_homogeneous(cam_to_world, unproject(cam.intr, u, v, d)));
    g.furthest.push_back(g.points.back());
  }
  return g;
}

RayGrid discretize_rig(std::span<const CameraModel> cams) {
  RayGrid all;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    RayGrid g = discretize_rays(cams[i], static_cast<int>(i));
    if (i == 0) {
      all.depth_bins = g.depth_bins;
    } else if (g.depth_bins != all.depth_bins) {
      throw std::invalid_argument("discretize_rig: cameras disagree on depth bin count");
    }
    all.points.insert(all.points.end(), g.points.begin(), g.points.end());
    all.furthest.insert(all.furthest.end(), g.furthest.begin(), g.furthest.end());
    all.view.insert(all.view.end(), g.view.begin(), g.view.end());
  }
  return all;
}

double wrap_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("wrap_angle: non-finite angle");
  if (a > -kPi && a <= kPi) return a;
  double r = std::fmod(kPi - a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  double out = kPi - r;
  if (out <= -kPi) out += kTwoPi;
  return out;
}

double bev_angle(const Vec3& p) {
  double a = std::atan2(p.y(), p.x());
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a -= kTwoPi;
  return a;
}

}  // namespace dvpe
