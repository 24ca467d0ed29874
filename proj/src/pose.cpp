#include "supnerf/pose.hpp"

#include <cmath>

#include "supnerf/errors.hpp"

namespace supnerf {

PoseState sample_initial_pose(const PixelRect& roi, const CameraIntrinsics& k,
                              Rng& rng, const RefinerConfig& cfg) {
  if (roi.empty())
    throw std::invalid_argument("sample_initial_pose: empty roi");
  if (roi.x < 0 || roi.y < 0 || roi.x + roi.w > k.width ||
      roi.y + roi.h > k.height)
    throw std::invalid_argument("sample_initial_pose: roi outside image");
  PoseState s;
  s.u = roi.x + rng.uniform() * roi.w;
  s.v = roi.y + rng.uniform() * roi.h;
  s.z = cfg.init_depth;
  double yaw = rng.uniform() * 2.0 * M_PI;
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  double angle = rng.uniform(-cfg.rot_perturb_max, cfg.rot_perturb_max);
  s.rot = exp_so3(AxisAngle{axis * angle}) * RotationSO3::about_y(yaw);
  return s;
}

double extract_yaw(const RotationSO3& rot) {
  // Image of the object x axis in the camera x-z plane.
  return std::atan2(-rot.m(2, 0), rot.m(0, 0));
}

PoseState apply_update(const PoseState& s, const PoseUpdate& u) {
  PoseState n;
  n.u = s.u + u.vx;
  n.v = s.v + u.vy;
  n.z = u.rho * s.z;
  n.rot = exp_so3(u.dq) * s.rot;
  return n;
}

TapePoseState tape_state_const(Tape& t, const PoseState& s) {
  Tensor r({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = s.rot.m(i, j);
  TapePoseState out;
  out.rot = t.constant(std::move(r));
  out.uv = t.constant(Tensor({2}, {s.u, s.v}));
  out.z = t.constant(Tensor({1}, {s.z}));
  return out;
}

PoseState tape_state_value(const Tape& t, const TapePoseState& s) {
  PoseState out;
  const Tensor& r = t.value(s.rot);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.rot.m(i, j) = r.at(i, j);
  out.u = t.value(s.uv)[0];
  out.v = t.value(s.uv)[1];
  out.z = t.value(s.z)[0];
  return out;
}

TapePoseState apply_update_tape(Tape& t, const TapePoseState& s, Var dq,
                                Var dv, Var rho) {
  TapePoseState n;
  n.uv = t.add(s.uv, dv);
  n.z = t.mul(s.z, rho);
  n.rot = t.matmul(exp_so3_tape(t, dq), s.rot);
  return n;
}

Var state_corners_tape(Tape& t, const TapePoseState& s, Var dims,
                       const CameraIntrinsics& k) {
  // Depth floored at 0.5 m before projection so wild mid-training states
  // stay projectable.
  Var z_proj = t.clamp_min(s.z, 0.5);
  Var t_o2c = translation_from_uvz(t, s.uv, z_proj, k);
  return project_corners_tape(t, s.rot, t_o2c, dims, k);
}

Var normalize_corners_roi(Tape& t, Var corners, const PixelRect& roi) {
  if (roi.empty())
    throw std::invalid_argument("normalize_corners_roi: empty roi");
  std::vector<double> off, scale;
  for (int i = 0; i < 8; ++i) {
    off.push_back(-roi.x);
    off.push_back(-roi.y);
    scale.push_back(1.0 / roi.w);
    scale.push_back(1.0 / roi.h);
  }
  Var shifted = t.add(corners, t.constant(Tensor({8, 2}, off)));
  return t.reshape(t.mul(shifted, t.constant(Tensor({8, 2}, scale))), {16});
}

RefineStepOut refine_step(ParamBinder& bind, const SupNerfModel& model,
                          const TapePoseState& state, Var pose_code, Var dims,
                          const CameraIntrinsics& k, const PixelRect& roi) {
  Tape& t = bind.tape();
  RefineStepOut out;
  out.corners_in = state_corners_tape(t, state, dims, k);
  Var box_code =
      model.encode_box(bind, normalize_corners_roi(t, out.corners_in, roi));
  SupNerfModel::Update u = model.refiner_forward(bind, pose_code, box_code);
  out.next = apply_update_tape(t, state, u.dq, u.dv, u.rho);
  return out;
}

RefineTrajectory refine(ParamBinder& bind, const SupNerfModel& model,
                        const PoseState& state0, Var pose_code, Var dims,
                        const CameraIntrinsics& k, const PixelRect& roi,
                        int iterations) {
  if (iterations < 1)
    throw std::invalid_argument("refine: iterations must be >= 1");
  Tape& t = bind.tape();
  RefineTrajectory traj;
  TapePoseState cur = tape_state_const(t, state0);
  traj.states.push_back(state0);
  for (int it = 0; it < iterations; ++it) {
    RefineStepOut step = refine_step(bind, model, cur, pose_code, dims, k, roi);
    traj.corners.push_back(step.corners_in);
    cur = step.next;
    traj.states.push_back(tape_state_value(t, cur));
  }
  traj.final_state = cur;
  return traj;
}

DirectPoseOut mlp_direct_pose(ParamBinder& bind, const SupNerfModel& model,
                              Var pose_code, Var dims,
                              const CameraIntrinsics& k, const PixelRect& roi,
                              double init_depth) {
  Tape& t = bind.tape();
  Var raw = model.mlp_direct_forward(bind, pose_code);  // (6)
  DirectPoseOut out;
  out.state.rot = exp_so3_tape(t, t.slice(raw, 0, 0, 3));
  Var uv_norm = t.slice(raw, 0, 3, 2);
  Var uv_scale = t.constant(Tensor({2}, {roi.w, roi.h}));
  Var uv_off = t.constant(Tensor({2}, {roi.x, roi.y}));
  out.state.uv = t.add(t.mul(uv_norm, uv_scale), uv_off);
  out.state.z = t.mul_const(t.exp_op(t.slice(raw, 0, 5, 1)), init_depth);
  out.corners = state_corners_tape(t, out.state, dims, k);
  return out;
}

PnPResult pnp_gauss_newton(const BoxCorners2D& corners,
                           const BoxDimensions& dims,
                           const CameraIntrinsics& k, int iterations,
                           double init_depth) {
  dims.validate("pnp_gauss_newton");
  PnPResult res;
  res.pose.rot = RotationSO3::identity();
  res.pose.t = Vec3(0, 0, init_depth);

  auto mean_error = [&](const PoseO2C& pose) {
    double e = 0;
    for (int i = 0; i < 8; ++i) {
      Vec3 xc = transform_point(pose, box_corner_object(dims, i));
      double z = std::max(xc.z(), 0.5);
      Vec2 uv(k.fx * xc.x() / z + k.cx, k.fy * xc.y() / z + k.cy);
      e += (uv - corners.pts[i]).norm();
    }
    return e / 8.0;
  };

  double prev_err = mean_error(res.pose);
  int rising = 0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i = 0; i < 8; ++i) {
      Vec3 xc = transform_point(res.pose, box_corner_object(dims, i));
      double z = std::max(xc.z(), 0.5);
      Vec2 r(k.fx * xc.x() / z + k.cx - corners.pts[i].x(),
             k.fy * xc.y() / z + k.cy - corners.pts[i].y());
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << k.fx / z, 0, -k.fx * xc.x() / (z * z), 0, k.fy / z,
          -k.fy * xc.y() / (z * z);
      Eigen::Matrix<double, 2, 6> J;
      J.block<2, 3>(0, 0) = -dpi * skew(res.pose.rot.m * box_corner_object(dims, i));
      J.block<2, 3>(0, 3) = dpi;
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    H.diagonal().array() += 1e-9;
    Eigen::Matrix<double, 6, 1> delta = H.ldlt().solve(-g);
    // Cap the step: a full GN jump across the projection nonlinearity can
    // throw corners behind the camera and never recover.
    double rot_norm = delta.head<3>().norm();
    if (rot_norm > 0.5) delta.head<3>() *= 0.5 / rot_norm;
    double t_norm = delta.tail<3>().norm();
    if (t_norm > 5.0) delta.tail<3>() *= 5.0 / t_norm;
    res.pose.rot = exp_so3(AxisAngle{delta.head<3>()}) * res.pose.rot;
    res.pose.t += delta.tail<3>();
    res.iterations = it + 1;

    double err = mean_error(res.pose);
    rising = err > prev_err ? rising + 1 : 0;
    prev_err = err;
    if (rising >= 3) {
      res.diverged = true;
      break;
    }
  }
  res.reproj_error = prev_err;
  return res;
}

}  // namespace supnerf
