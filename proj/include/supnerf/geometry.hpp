#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>

namespace supnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// 3x3 rotation matrix, orthonormal with det +1 (checked to 1e-9 by
// validate()).
struct RotationSO3 {
  Mat3 m = Mat3::Identity();

  static RotationSO3 identity() { return RotationSO3{}; }
  static RotationSO3 about_x(double rad);
  static RotationSO3 about_y(double rad);
  static RotationSO3 about_z(double rad);

  RotationSO3 transposed() const { return RotationSO3{m.transpose()}; }
  RotationSO3 operator*(const RotationSO3& o) const {
    return RotationSO3{m * o.m};
  }
  Vec3 operator*(const Vec3& v) const { return m * v; }

  bool is_valid(double tol = 1e-9) const;
  void validate(const char* where) const;
};

// Lie-algebra rotation vector: axis * angle, angle = |q|.
struct AxisAngle {
  Vec3 q = Vec3::Zero();
  double angle() const { return q.norm(); }
};

// Object pose in the camera frame: X_c = rot * X_o + t.
struct PoseO2C {
  RotationSO3 rot;
  Vec3 t = Vec3::Zero();
};

// Camera pose in the object frame: X_o = rot * X_c + t.
struct PoseC2O {
  RotationSO3 rot;
  Vec3 t = Vec3::Zero();
};

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate(const char* where) const;
  // Direction of the ray through continuous pixel coords, camera frame,
  // not normalized: ((u-cx)/fx, (v-cy)/fy, 1).
  Vec3 unproject_dir(double u, double v) const {
    return Vec3((u - cx) / fx, (v - cy) / fy, 1.0);
  }
};

// Object box extents in meters: x spans length l, y height h, z width w.
struct BoxDimensions {
  double h = 0, w = 0, l = 0;

  double diagonal() const { return std::sqrt(h * h + w * w + l * l); }
  void validate(const char* where) const;
};

// Eight projected box corners in pixel coordinates. Corner i sits, in the
// object frame, at (bit0 ? +l/2 : -l/2, bit1 ? +h/2 : -h/2,
// bit2 ? +w/2 : -w/2) of index i's bits.
struct BoxCorners2D {
  std::array<Vec2, 8> pts;
};

// Object-frame corner i in meters, per the bit ordering above.
Vec3 box_corner_object(const BoxDimensions& dims, int i);

// Ray in the object frame; dir is unit length, t in meters.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  double t_near = 0;
  double t_far = 0;
};

struct PixelRect {
  double x = 0, y = 0, w = 0, h = 0;
  bool empty() const { return w <= 0 || h <= 0; }
};

// --- SO(3) maps -----------------------------------------------------------

// Rodrigues formula; second-order Taylor fallback below angle 1e-8.
RotationSO3 exp_so3(const AxisAngle& q);
// Canonical log, |q| in [0, pi]; stable axis extraction near pi.
AxisAngle log_so3(const RotationSO3& r);
Mat3 skew(const Vec3& v);

// --- frame conversions -----------------------------------------------------

PoseC2O o2c_to_c2o(const PoseO2C& p);
PoseO2C c2o_to_o2c(const PoseC2O& p);

Vec3 transform_point(const PoseO2C& p, const Vec3& x_o);
Vec3 transform_point(const PoseC2O& p, const Vec3& x_c);

// --- projection --------------------------------------------------------------

// Pinhole projection; throws BehindCameraError for z <= 1e-6.
Vec2 project(const CameraIntrinsics& k, const Vec3& x_c);

BoxCorners2D project_box_corners(const BoxDimensions& dims, const PoseO2C& pose,
                                 const CameraIntrinsics& k);

// Object-frame ray through continuous pixel (u,v).
Ray ray_through_pixel(const CameraIntrinsics& k, double u, double v,
                      const PoseC2O& pose_c2o);

// Slab clip against the metric box [-l/2,l/2]x[-h/2,h/2]x[-w/2,w/2];
// nullopt when the ray misses. Entry clamped to t >= 0.
std::optional<std::pair<double, double>> ray_box_clip(const Ray& ray,
                                                      const BoxDimensions& dims);

// --- error metrics ------------------------------------------------------------

// Geodesic angle between rotations, degrees.
double rotation_error_deg(const RotationSO3& a, const RotationSO3& b);
// Euclidean distance, meters.
double translation_error_m(const Vec3& a, const Vec3& b);

}  // namespace supnerf
