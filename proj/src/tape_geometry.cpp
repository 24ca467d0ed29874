#include "supnerf/tape_geometry.hpp"

#include <cmath>

namespace supnerf {

namespace {

Var scalar_times_mat(Tape& t, Var s, Var m) {
  return t.mul(t.broadcast(s, t.value(m).shape()), m);
}

}  // namespace

Var exp_so3_tape(Tape& t, Var q) {
  if (t.value(q).shape() != std::vector<std::int64_t>{3})
    throw ShapeError("exp_so3_tape: expected (3) rotation vector");
  // K = sum_i q_i * G_i with the so(3) generators.
  static const double gx[9] = {0, 0, 0, 0, 0, -1, 0, 1, 0};
  static const double gy[9] = {0, 0, 1, 0, 0, 0, -1, 0, 0};
  static const double gz[9] = {0, -1, 0, 1, 0, 0, 0, 0, 0};
  Var Gx = t.constant(Tensor({3, 3}, std::vector<double>(gx, gx + 9)));
  Var Gy = t.constant(Tensor({3, 3}, std::vector<double>(gy, gy + 9)));
  Var Gz = t.constant(Tensor({3, 3}, std::vector<double>(gz, gz + 9)));
  Var K = t.add(t.add(scalar_times_mat(t, t.slice(q, 0, 0, 1), Gx),
                      scalar_times_mat(t, t.slice(q, 0, 1, 1), Gy)),
                scalar_times_mat(t, t.slice(q, 0, 2, 1), Gz));
  Var K2 = t.matmul(K, K);

  Var theta2 = t.sum(t.mul(q, q));
  double th2 = t.value(theta2)[0];
  Var a, b;
  if (th2 < 1e-16) {
    a = t.add_const(t.mul_const(theta2, -1.0 / 6.0), 1.0);
    b = t.add_const(t.mul_const(theta2, -1.0 / 24.0), 0.5);
  } else {
    Var theta = t.sqrt_op(theta2);
    a = t.div(t.sin_op(theta), theta);
    Var one_minus_cos = t.add_const(t.neg(t.cos_op(theta)), 1.0);
    b = t.div(one_minus_cos, theta2);
  }
  Var eye = t.constant(
      Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  return t.add(eye, t.add(scalar_times_mat(t, a, K),
                          scalar_times_mat(t, b, K2)));
}

Var matvec3(Tape& t, Var m, Var v) {
  return t.reshape(t.matmul(m, t.reshape(v, {3, 1})), {3});
}

TapePose tape_pose_const(Tape& t, const PoseC2O& pose) {
  Tensor r({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = pose.rot.m(i, j);
  Tensor tv({3}, {pose.t.x(), pose.t.y(), pose.t.z()});
  return TapePose{t.constant(std::move(r)), t.constant(std::move(tv))};
}

TapePose tape_pose_o2c_relative(Tape& t, const RotationSO3& rot0, double u0,
                                double v0, double z0,
                                const CameraIntrinsics& k,
                                O2CRelativeVars* vars) {
  vars->dq = t.leaf(Tensor::zeros({3}), true);
  vars->dv = t.leaf(Tensor::zeros({2}), true);
  vars->dlog_rho = t.leaf(Tensor::zeros({1}), true);
  return tape_pose_o2c_relative_from(t, rot0, u0, v0, z0, k, vars->dq,
                                     vars->dv, vars->dlog_rho);
}

TapePose tape_pose_o2c_relative_from(Tape& t, const RotationSO3& rot0,
                                     double u0, double v0, double z0,
                                     const CameraIntrinsics& k, Var dq, Var dv,
                                     Var dlog_rho) {
  Tensor r0({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r0.at(i, j) = rot0.m(i, j);
  Var rot_o2c = t.matmul(exp_so3_tape(t, dq), t.constant(std::move(r0)));

  Var ux =
      t.mul_const(t.add_const(t.slice(dv, 0, 0, 1), u0 - k.cx), 1.0 / k.fx);
  Var vy =
      t.mul_const(t.add_const(t.slice(dv, 0, 1, 1), v0 - k.cy), 1.0 / k.fy);
  Var one = t.constant(Tensor({1}, {1.0}));
  Var dir = t.concat({ux, vy, one}, 0);
  Var z = t.mul_const(t.exp_op(dlog_rho), z0);
  Var t_o2c = t.mul(t.broadcast(z, {3}), dir);

  TapePose pose;
  pose.rot_c2o = t.transpose(rot_o2c);
  pose.t_c2o = t.neg(matvec3(t, pose.rot_c2o, t_o2c));
  return pose;
}

TapePose tape_pose_c2o_raw(Tape& t, const AxisAngle& q0, const Vec3& t0,
                           C2ORawVars* vars) {
  vars->q = t.leaf(Tensor({3}, {q0.q.x(), q0.q.y(), q0.q.z()}), true);
  vars->t = t.leaf(Tensor({3}, {t0.x(), t0.y(), t0.z()}), true);
  return TapePose{exp_so3_tape(t, vars->q), vars->t};
}

PoseC2O tape_pose_value(const Tape& t, const TapePose& pose) {
  const Tensor& r = t.value(pose.rot_c2o);
  const Tensor& tv = t.value(pose.t_c2o);
  PoseC2O out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.rot.m(i, j) = r.at(i, j);
  out.t = Vec3(tv[0], tv[1], tv[2]);
  return out;
}

Var translation_from_uvz(Tape& t, Var uv, Var z, const CameraIntrinsics& k) {
  Var ux = t.mul_const(t.add_const(t.slice(uv, 0, 0, 1), -k.cx), 1.0 / k.fx);
  Var vy = t.mul_const(t.add_const(t.slice(uv, 0, 1, 1), -k.cy), 1.0 / k.fy);
  Var one = t.constant(Tensor({1}, {1.0}));
  Var dir = t.concat({ux, vy, one}, 0);
  return t.mul(t.broadcast(z, {3}), dir);
}

Var project_corners_tape(Tape& t, Var rot_o2c, Var t_o2c, Var dims,
                         const CameraIntrinsics& k, double z_floor) {
  // dims arrives as (h,w,l); corners use (l,h,w) along (x,y,z).
  Var lhw = t.concat({t.slice(dims, 0, 2, 1), t.slice(dims, 0, 0, 1),
                      t.slice(dims, 0, 1, 1)},
                     0);
  std::vector<double> signs;
  signs.reserve(24);
  for (int i = 0; i < 8; ++i) {
    signs.push_back((i & 1) ? 0.5 : -0.5);
    signs.push_back((i & 2) ? 0.5 : -0.5);
    signs.push_back((i & 4) ? 0.5 : -0.5);
  }
  Var corners_o =
      t.mul(t.constant(Tensor({8, 3}, signs)), t.broadcast(lhw, {8, 3}));
  Var x_c = t.add(t.matmul(corners_o, t.transpose(rot_o2c)),
                  t.broadcast(t_o2c, {8, 3}));
  Var x = t.slice(x_c, 1, 0, 1);
  Var y = t.slice(x_c, 1, 1, 1);
  Var z = t.clamp_min(t.slice(x_c, 1, 2, 1), z_floor);
  Var u = t.add_const(t.mul_const(t.div(x, z), k.fx), k.cx);
  Var v = t.add_const(t.mul_const(t.div(y, z), k.fy), k.cy);
  return t.concat({u, v}, 1);
}

}  // namespace supnerf
