#include <doctest.h>

#include <cmath>

#include "supnerf/errors.hpp"
#include "supnerf/geometry.hpp"
#include "supnerf/rng.hpp"

using namespace supnerf;

namespace {

RotationSO3 random_rotation(Rng& rng, double max_angle = M_PI - 0.01) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  return exp_so3(AxisAngle{axis * rng.uniform(0.0, max_angle)});
}

PoseO2C random_pose(Rng& rng) {
  PoseO2C p;
  p.rot = random_rotation(rng);
  p.t = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(5, 40));
  return p;
}

CameraIntrinsics test_k() {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 64;
  k.width = k.height = 128;
  return k;
}

}  // namespace

TEST_CASE("exp_so3 of zero is identity") {
  RotationSO3 r = exp_so3(AxisAngle{Vec3::Zero()});
  CHECK((r.m - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("exp_so3 quarter turn about z maps x to y") {
  RotationSO3 r = exp_so3(AxisAngle{Vec3(0, 0, M_PI / 2)});
  Vec3 y = r * Vec3(1, 0, 0);
  CHECK((y - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("exp_so3 rejects non-finite input") {
  CHECK_THROWS_AS(exp_so3(AxisAngle{Vec3(NAN, 0, 0)}),
                  std::invalid_argument);
}

TEST_CASE("log_so3 of identity is zero") {
  CHECK(log_so3(RotationSO3::identity()).q.norm() == 0.0);
}

TEST_CASE("log_so3 round trips a small rotation to 1e-9") {
  AxisAngle q{Vec3(0.2, 0, 0)};
  AxisAngle back = log_so3(exp_so3(q));
  CHECK((back.q - q.q).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("log of transpose is the negative log") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    RotationSO3 r = random_rotation(rng);
    AxisAngle q = log_so3(r);
    AxisAngle qt = log_so3(r.transposed());
    CHECK((qt.q + q.q).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("log_so3 rejects non-orthonormal input") {
  RotationSO3 bad;
  bad.m << 1, 0, 0, 0, 2, 0, 0, 0, 1;
  CHECK_THROWS_AS(log_so3(bad), std::invalid_argument);
}

TEST_CASE("exp/log round trip over 1e4 random rotations below pi") {
  Rng rng(5);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    RotationSO3 r = random_rotation(rng);
    RotationSO3 back = exp_so3(log_so3(r));
    worst = std::max(worst, (back.m - r.m).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("log_so3 handles angles at and near pi") {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    double angle = M_PI - rng.uniform(0.0, 1e-6);
    RotationSO3 r = exp_so3(AxisAngle{axis * angle});
    AxisAngle q = log_so3(r);
    CHECK(q.angle() <= M_PI + 1e-12);
    CHECK((exp_so3(q).m - r.m).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("o2c to c2o inverts a pure translation") {
  PoseO2C p;
  p.t = Vec3(0, 0, 10);
  PoseC2O c = o2c_to_c2o(p);
  CHECK((c.rot.m - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((c.t - Vec3(0, 0, -10)).norm() < 1e-15);
}

TEST_CASE("o2c to c2o with a quarter-turn matches the hand result") {
  PoseO2C p;
  p.rot = RotationSO3::about_z(M_PI / 2);
  p.t = Vec3(1, 0, 0);
  PoseC2O c = o2c_to_c2o(p);
  CHECK((c.t - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("frame conversion is an involution to 1e-12 over 1000 poses") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    PoseO2C p = random_pose(rng);
    PoseO2C back = c2o_to_o2c(o2c_to_c2o(p));
    CHECK((back.rot.m - p.rot.m).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.t - p.t).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transform_point identity and pure offset") {
  PoseO2C id;
  CHECK((transform_point(id, Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
  PoseO2C p;
  p.t = Vec3(0, 0, 5);
  CHECK((transform_point(p, Vec3(1, 2, 3)) - Vec3(1, 2, 8)).norm() == 0.0);
}

TEST_CASE("transform_point inverts through the c2o pose") {
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    PoseO2C p = random_pose(rng);
    PoseC2O c = o2c_to_c2o(p);
    Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    Vec3 back = transform_point(c, transform_point(p, x));
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("project principal ray and offset point") {
  CameraIntrinsics k = test_k();
  CHECK((project(k, Vec3(0, 0, 10)) - Vec2(64, 64)).norm() == 0.0);
  CHECK((project(k, Vec3(1, 0, 10)) - Vec2(74, 64)).norm() < 1e-12);
}

TEST_CASE("projection offsets halve when depth doubles") {
  CameraIntrinsics k = test_k();
  Vec2 a = project(k, Vec3(1, 2, 10));
  Vec2 b = project(k, Vec3(1, 2, 20));
  CHECK((b - Vec2(64, 64)).isApprox(0.5 * (a - Vec2(64, 64)), 1e-12));
}

TEST_CASE("project throws behind the camera") {
  CameraIntrinsics k = test_k();
  CHECK_THROWS_AS(project(k, Vec3(0, 0, 0)), BehindCameraError);
  CHECK_THROWS_AS(project(k, Vec3(0, 0, -3)), BehindCameraError);
}

TEST_CASE("unit cube corner projection matches the hand computation") {
  CameraIntrinsics k = test_k();
  BoxDimensions dims{1, 1, 1};
  PoseO2C pose;
  pose.t = Vec3(0, 0, 10);
  BoxCorners2D c = project_box_corners(dims, pose, k);
  for (int i = 0; i < 8; ++i) {
    double z = (i & 4) ? 10.5 : 9.5;
    double u = 64 + 100 * ((i & 1) ? 0.5 : -0.5) / z;
    double v = 64 + 100 * ((i & 2) ? 0.5 : -0.5) / z;
    CHECK(c.pts[i].x() == doctest::Approx(u).epsilon(1e-12));
    CHECK(c.pts[i].y() == doctest::Approx(v).epsilon(1e-12));
  }
  CHECK(c.pts[0].x() == doctest::Approx(64 - 100 * 0.5 / 9.5));
}

TEST_CASE("corner spread shrinks monotonically with distance") {
  CameraIntrinsics k = test_k();
  BoxDimensions dims{1.5, 1.8, 4.0};
  double prev = 1e18;
  for (double z = 8; z <= 30; z += 2) {
    PoseO2C pose;
    pose.rot = RotationSO3::about_y(0.4);
    pose.t = Vec3(0, 0, z);
    BoxCorners2D c = project_box_corners(dims, pose, k);
    double lo = 1e18, hi = -1e18;
    for (auto& p : c.pts) {
      lo = std::min(lo, p.x());
      hi = std::max(hi, p.x());
    }
    CHECK(hi - lo < prev);
    prev = hi - lo;
  }
}

TEST_CASE("quarter turn about the vertical axis permutes corners by bit rule") {
  CameraIntrinsics k = test_k();
  BoxDimensions dims{1, 2, 2};  // l == w so the rotated box overlays itself
  PoseO2C pose;
  pose.t = Vec3(0, 0, 12);
  BoxCorners2D base = project_box_corners(dims, pose, k);
  PoseO2C rot = pose;
  rot.rot = RotationSO3::about_y(M_PI / 2);
  BoxCorners2D turned = project_box_corners(dims, rot, k);
  // Corner i of the turned box lands where corner j of the base box was,
  // with j.bit0 = i.bit2, j.bit1 = i.bit1, j.bit2 = !i.bit0 (for rotY(90):
  // x' = z, z' = -x).
  for (int i = 0; i < 8; ++i) {
    int j = (((i & 4) ? 1 : 0)) | (i & 2) | ((i & 1) ? 0 : 4);
    CHECK((turned.pts[i] - base.pts[j]).norm() < 1e-9);
  }
}

TEST_CASE("principal ray clips symmetrically through a centered box") {
  CameraIntrinsics k = test_k();
  BoxDimensions dims{2, 2, 2};
  PoseO2C pose;
  pose.t = Vec3(0, 0, 10);
  Ray ray = ray_through_pixel(k, 64, 64, o2c_to_c2o(pose));
  auto clip = ray_box_clip(ray, dims);
  REQUIRE(clip.has_value());
  CHECK(clip->first == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(clip->second == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("ray parallel to a face outside the slab misses") {
  Ray ray;
  ray.origin = Vec3(0, 5, -10);
  ray.dir = Vec3(0, 0, 1);
  CHECK(!ray_box_clip(ray, BoxDimensions{2, 2, 2}).has_value());
}

TEST_CASE("slab clip agrees with a dense marching oracle") {
  Rng rng(21);
  BoxDimensions dims{1.6, 2.0, 4.2};
  const int steps = 10000;
  for (int trial = 0; trial < 200; ++trial) {
    Ray ray;
    ray.origin = Vec3(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6));
    Vec3 target(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    ray.dir = (target - ray.origin).normalized();
    auto clip = ray_box_clip(ray, dims);

    // March densely and record the first/last sample inside the box.
    double t_max = 30.0, dt = t_max / steps;
    double first = -1, last = -1;
    for (int s = 0; s < steps; ++s) {
      Vec3 p = ray.origin + (s * dt) * ray.dir;
      bool inside = std::fabs(p.x()) <= dims.l / 2 &&
                    std::fabs(p.y()) <= dims.h / 2 &&
                    std::fabs(p.z()) <= dims.w / 2;
      if (inside) {
        if (first < 0) first = s * dt;
        last = s * dt;
      }
    }
    if (!clip.has_value()) {
      // The marcher may clip a sliver thinner than one step.
      CHECK((first < 0 || last - first < dt));
    } else {
      REQUIRE(first >= 0);
      CHECK(std::fabs(clip->first - first) <= dt);
      CHECK(std::fabs(clip->second - last) <= dt);
    }
  }
}

TEST_CASE("points on a pixel ray project back to the pixel within 1e-6") {
  CameraIntrinsics k = test_k();
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    PoseO2C pose = random_pose(rng);
    PoseC2O c2o = o2c_to_c2o(pose);
    double u = rng.uniform(0, 128), v = rng.uniform(0, 128);
    Ray ray = ray_through_pixel(k, u, v, c2o);
    for (double t : {5.0, 15.0, 33.0}) {
      Vec3 x_o = ray.origin + t * ray.dir;
      Vec3 x_c = transform_point(pose, x_o);
      if (x_c.z() <= 1e-6) continue;
      Vec2 uv = project(k, x_c);
      CHECK((uv - Vec2(u, v)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("rotation and translation errors match hand values") {
  CHECK(rotation_error_deg(RotationSO3::identity(), RotationSO3::identity()) ==
        0.0);
  CHECK(rotation_error_deg(RotationSO3::about_z(M_PI / 6),
                           RotationSO3::identity()) ==
        doctest::Approx(30.0).epsilon(1e-9));
  CHECK(translation_error_m(Vec3(0, 0, 20), Vec3(0, 0, 21)) ==
        doctest::Approx(1.0));
}

TEST_CASE("30 degree rotation error at 20m blows up the c2o translation") {
  PoseO2C exact;
  exact.t = Vec3(0, 0, 20);
  PoseO2C wrong = exact;
  wrong.rot = RotationSO3::about_y(30.0 * M_PI / 180.0);
  Vec3 d = o2c_to_c2o(wrong).t - o2c_to_c2o(exact).t;
  double expected = 2.0 * std::sin(15.0 * M_PI / 180.0) * 20.0;
  CHECK(d.norm() == doctest::Approx(expected).epsilon(1e-9));
  CHECK(d.norm() > 10.0);
}
