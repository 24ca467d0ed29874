#pragma once

#include "supnerf/geometry.hpp"
#include "supnerf/tape.hpp"

namespace supnerf {

// Differentiable twins of the geometry module, composed from tape
// primitives. Branches are chosen from recorded values (define-by-run).

// Rodrigues map of a rotation vector (3) -> rotation matrix (3,3).
// Taylor branch below |q| = 1e-8 keeps the gradient finite at zero.
Var exp_so3_tape(Tape& t, Var q);

// (3,3) * (3) -> (3)
Var matvec3(Tape& t, Var m, Var v);

// Camera pose in the object frame, on the tape.
struct TapePose {
  Var rot_c2o;  // (3,3)
  Var t_c2o;    // (3)
};

TapePose tape_pose_const(Tape& t, const PoseC2O& pose);

// O2C relative-space parameterization: leaves (dq, dv, dlog_rho) start at
// zero around the current state (rot0, u0, v0, z0); re-zeroed every step.
struct O2CRelativeVars {
  Var dq;        // (3) axis-angle delta, left-composed onto rot0
  Var dv;        // (2) pixel shift of the projected center
  Var dlog_rho;  // (1) log depth ratio
};

TapePose tape_pose_o2c_relative(Tape& t, const RotationSO3& rot0, double u0,
                                double v0, double z0,
                                const CameraIntrinsics& k,
                                O2CRelativeVars* vars);

// Same chain over caller-provided delta vars (e.g. gradient checking).
TapePose tape_pose_o2c_relative_from(Tape& t, const RotationSO3& rot0,
                                     double u0, double v0, double z0,
                                     const CameraIntrinsics& k, Var dq, Var dv,
                                     Var dlog_rho);

// Raw C2O parameterization: leaves are the full rotation vector and camera
// position in the object frame.
struct C2ORawVars {
  Var q;        // (3)
  Var t;        // (3)
};

TapePose tape_pose_c2o_raw(Tape& t, const AxisAngle& q0, const Vec3& t0,
                           C2ORawVars* vars);

// Materialize the current numeric pose from a tape pose.
PoseC2O tape_pose_value(const Tape& t, const TapePose& pose);

// Projected box corners (8,2) from on-tape rotation (3,3), translation (3)
// and dims (3)=(h,w,l). Corner depth is floored at z_floor to stay
// projectable mid-training.
Var project_corners_tape(Tape& t, Var rot_o2c, Var t_o2c, Var dims,
                         const CameraIntrinsics& k, double z_floor = 0.25);

// O2C translation (3) from image-space state (u, v as (2)) and depth (1).
Var translation_from_uvz(Tape& t, Var uv, Var z, const CameraIntrinsics& k);

}  // namespace supnerf
