#include "supnerf/geometry.hpp"

#include <cmath>

#include "supnerf/errors.hpp"

namespace supnerf {

RotationSO3 RotationSO3::about_x(double rad) {
  return exp_so3(AxisAngle{Vec3(rad, 0, 0)});
}
RotationSO3 RotationSO3::about_y(double rad) {
  return exp_so3(AxisAngle{Vec3(0, rad, 0)});
}
RotationSO3 RotationSO3::about_z(double rad) {
  return exp_so3(AxisAngle{Vec3(0, 0, rad)});
}

bool RotationSO3::is_valid(double tol) const {
  Mat3 err = m.transpose() * m - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() < tol && std::fabs(m.determinant() - 1.0) < tol;
}

void RotationSO3::validate(const char* where) const {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(where) + ": non-finite rotation");
  if (!is_valid(1e-6))
    throw std::invalid_argument(std::string(where) +
                                ": matrix is not a rotation");
}

void CameraIntrinsics::validate(const char* where) const {
  if (fx <= 0 || fy <= 0 || cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument(std::string(where) + ": bad intrinsics");
}

void BoxDimensions::validate(const char* where) const {
  if (!(h > 0) || !(w > 0) || !(l > 0))
    throw std::invalid_argument(std::string(where) +
                                ": box dimensions must be positive");
}

Vec3 box_corner_object(const BoxDimensions& dims, int i) {
  return Vec3((i & 1) ? dims.l / 2 : -dims.l / 2,
              (i & 2) ? dims.h / 2 : -dims.h / 2,
              (i & 4) ? dims.w / 2 : -dims.w / 2);
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

RotationSO3 exp_so3(const AxisAngle& q) {
  if (!q.q.allFinite())
    throw std::invalid_argument("exp_so3: non-finite rotation vector");
  double theta = q.q.norm();
  Mat3 K = skew(q.q);
  double a, b;
  if (theta < 1e-8) {
    double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return RotationSO3{Mat3::Identity() + a * K + b * (K * K)};
}

AxisAngle log_so3(const RotationSO3& r) {
  r.validate("log_so3");
  double c = (r.m.trace() - 1.0) / 2.0;
  c = std::max(-1.0, std::min(1.0, c));
  Vec3 w(r.m(2, 1) - r.m(1, 2), r.m(0, 2) - r.m(2, 0), r.m(1, 0) - r.m(0, 1));
  double s = 0.5 * w.norm();  // sin(theta), exact from the vee part
  double theta = std::atan2(s, c);
  if (theta < 1e-8) {
    // log(R) ~ vee(R - R^T)/2 for small angles.
    return AxisAngle{0.5 * w};
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the vee part vanishes. The symmetric part of R + I equals
    // (1 + cos) I + (1 - cos) n n^T, so n n^T stays well conditioned there.
    Mat3 nnT = ((r.m + r.m.transpose()) / 2.0 - c * Mat3::Identity()) /
               (1.0 - c);
    Vec3 axis;
    for (int i = 0; i < 3; ++i) axis[i] = std::sqrt(std::max(0.0, nnT(i, i)));
    int ref = 0;
    nnT.diagonal().maxCoeff(&ref);
    for (int i = 0; i < 3; ++i)
      if (i != ref && nnT(ref, i) < 0) axis[i] = -axis[i];
    axis.normalize();
    // Keep the sign continuous with the vee formula when it still carries
    // direction; at exactly pi either sign is canonical.
    if (axis.dot(w) < 0) axis = -axis;
    return AxisAngle{theta * axis};
  }
  return AxisAngle{theta / (2.0 * s) * w};
}

PoseC2O o2c_to_c2o(const PoseO2C& p) {
  PoseC2O out;
  out.rot = p.rot.transposed();
  out.t = -(out.rot.m * p.t);
  return out;
}

PoseO2C c2o_to_o2c(const PoseC2O& p) {
  PoseO2C out;
  out.rot = p.rot.transposed();
  out.t = -(out.rot.m * p.t);
  return out;
}

Vec3 transform_point(const PoseO2C& p, const Vec3& x_o) {
  return p.rot.m * x_o + p.t;
}

Vec3 transform_point(const PoseC2O& p, const Vec3& x_c) {
  return p.rot.m * x_c + p.t;
}

Vec2 project(const CameraIntrinsics& k, const Vec3& x_c) {
  if (x_c.z() <= 1e-6)
    throw BehindCameraError("project: point behind camera, z=" +
                            std::to_string(x_c.z()));
  return Vec2(k.fx * x_c.x() / x_c.z() + k.cx,
              k.fy * x_c.y() / x_c.z() + k.cy);
}

BoxCorners2D project_box_corners(const BoxDimensions& dims, const PoseO2C& pose,
                                 const CameraIntrinsics& k) {
  dims.validate("project_box_corners");
  BoxCorners2D out;
  for (int i = 0; i < 8; ++i)
    out.pts[i] = project(k, transform_point(pose, box_corner_object(dims, i)));
  return out;
}

Ray ray_through_pixel(const CameraIntrinsics& k, double u, double v,
                      const PoseC2O& pose_c2o) {
  k.validate("ray_through_pixel");
  Ray ray;
  ray.origin = pose_c2o.t;
  ray.dir = (pose_c2o.rot.m * k.unproject_dir(u, v)).normalized();
  return ray;
}

std::optional<std::pair<double, double>> ray_box_clip(const Ray& ray,
                                                      const BoxDimensions& dims) {
  const double half[3] = {dims.l / 2, dims.h / 2, dims.w / 2};
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = ray.origin[a], d = ray.dir[a];
    if (std::fabs(d) < 1e-12) {
      if (o < -half[a] || o > half[a]) return std::nullopt;
      continue;
    }
    double ta = (-half[a] - o) / d;
    double tb = (half[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

double rotation_error_deg(const RotationSO3& a, const RotationSO3& b) {
  double c = ((a.m * b.m.transpose()).trace() - 1.0) / 2.0;
  c = std::max(-1.0, std::min(1.0, c));
  return std::acos(c) * 180.0 / M_PI;
}

double translation_error_m(const Vec3& a, const Vec3& b) {
  return (a - b).norm();
}

}  // namespace supnerf
