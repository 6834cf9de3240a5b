#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dvpe {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Rotation about the world z-axis. Rotating by theta adds theta to the BEV
/// angle atan2(y, x) of every point.
class RotMat3 {
 public:
  RotMat3() : m_(Mat3::Identity()) {}

  const Mat3& matrix() const { return m_; }
  double angle() const { return angle_; }

  Vec3 operator*(const Vec3& p) const { return m_ * p; }
  RotMat3 operator*(const RotMat3& other) const;
  RotMat3 inverse() const;

 private:
  friend RotMat3 make_rotation_z(double theta);
  RotMat3(const Mat3& m, double angle) : m_(m), angle_(angle) {}

  Mat3 m_;
  double angle_ = 0.0;
};

RotMat3 make_rotation_z(double theta);

/// Rigid 4x4 transform. The last row is always (0,0,0,1) and the rotation
/// block is orthonormal to 1e-9; construction from a raw matrix validates.
class HomMat4 {
 public:
  HomMat4() : m_(Mat4::Identity()) {}

  static HomMat4 identity() { return {}; }
  static HomMat4 from_matrix(const Mat4& m);
  static HomMat4 from_rotation_translation(const Mat3& r, const Vec3& t);
  static HomMat4 translation(const Vec3& t);
  static HomMat4 rotation_z(double theta);

  const Mat4& matrix() const { return m_; }
  Mat3 rotation() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return m_.topRightCorner<3, 1>(); }

  HomMat4 inverse() const;
  HomMat4 operator*(const HomMat4& rhs) const;

 private:
  explicit HomMat4(const Mat4& m) : m_(m) {}
  Mat4 m_;
};

Vec3 apply_homogeneous(const HomMat4& h, const Vec3& p);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Pinhole camera on the feature-map grid. Frustum frame: +x forward along
/// the optical axis, +y left, +z up. `world_to_cam` maps world points into
/// that frame.
struct CameraModel {
  Intrinsics intr;
  HomMat4 world_to_cam;
  int feat_h = 1;
  int feat_w = 1;
  std::vector<double> depths;

  void validate() const;
  std::size_t tokens() const { return static_cast<std::size_t>(feat_h) * feat_w; }
  /// Pixel centre of token t (row-major over the feature grid).
  std::pair<double, double> token_pixel(std::size_t t) const;
  Vec3 center_world() const;
};

/// Linearly spaced depth bins in [near, far].
std::vector<double> linear_depth_bins(int count, double near = 1.0, double far = 60.0);

/// Pixel + depth to a point in the frustum frame.
Vec3 unproject(const Intrinsics& intr, double u, double v, double depth);

struct Projection {
  double u;
  double v;
  double depth;
};

/// World point to pixel coordinates; nullopt when behind the camera.
std::optional<Projection> project(const CameraModel& cam, const Vec3& world);

struct RayGrid {
  std::size_t depth_bins = 0;
  std::vector<Vec3> points;    // tokens * depth_bins, token-major
  std::vector<Vec3> furthest;  // one per token
  std::vector<int> view;       // owning camera per token

  std::size_t tokens() const { return furthest.size(); }
  const Vec3& point(std::size_t token, std::size_t d) const { return points[token * depth_bins + d]; }
};

RayGrid discretize_rays(const CameraModel& cam, int view_index = 0);
RayGrid discretize_rig(std::span<const CameraModel> cams);

/// Maps to (-pi, pi]. Values already in range are returned unchanged.
double wrap_angle(double a);

/// BEV angle atan2(y, x) mapped to [0, 2pi).
double bev_angle(const Vec3& p);

}  // namespace dvpe
