#pragma once

#include <cstdint>
#include <vector>

#include "supnerf/geometry.hpp"
#include "supnerf/nets.hpp"
#include "supnerf/rng.hpp"
#include "supnerf/tape_geometry.hpp"

namespace supnerf {

// The refiner's iterate: rotation plus image-space center and depth.
struct PoseState {
  RotationSO3 rot;  // R_o2c
  double u = 0;     // pixels
  double v = 0;     // pixels
  double z = 0;     // meters, > 0

  PoseO2C materialize(const CameraIntrinsics& k) const {
    PoseO2C p;
    p.rot = rot;
    p.t = z * k.unproject_dir(u, v);
    return p;
  }
};

// Relative-space delta emitted by the refiner head.
struct PoseUpdate {
  AxisAngle dq;
  double vx = 0;   // pixels
  double vy = 0;   // pixels
  double rho = 1;  // depth ratio, > 0
};

struct RefinerConfig {
  int iterations = 3;
  double init_depth = 20.0;                      // meters
  double rot_perturb_max = 20.0 * M_PI / 180.0;  // radians
};

// Random pose across the whole pose space: center uniform in the roi, depth
// pinned to init_depth, yaw uniform over the full circle composed with a
// bounded random-axis perturbation. Identical procedure at train and test.
PoseState sample_initial_pose(const PixelRect& roi, const CameraIntrinsics& k,
                              Rng& rng, const RefinerConfig& cfg);

// Yaw read back from an o2c rotation (about the camera vertical axis).
double extract_yaw(const RotationSO3& rot);

PoseState apply_update(const PoseState& s, const PoseUpdate& u);

// --- tape-side refinement ---------------------------------------------------

struct TapePoseState {
  Var rot;  // (3,3) R_o2c
  Var uv;   // (2)
  Var z;    // (1)
};

TapePoseState tape_state_const(Tape& t, const PoseState& s);
PoseState tape_state_value(const Tape& t, const TapePoseState& s);

// Eq-style relative update on the tape: uv += dv, z *= rho,
// R = exp(dq) * R.
TapePoseState apply_update_tape(Tape& t, const TapePoseState& s, Var dq,
                                Var dv, Var rho);

// Corners of the state's box, and roi-normalized encoding of them.
Var state_corners_tape(Tape& t, const TapePoseState& s, Var dims,
                       const CameraIntrinsics& k);
Var normalize_corners_roi(Tape& t, Var corners, const PixelRect& roi);

struct RefineStepOut {
  TapePoseState next;
  Var corners_in;  // (8,2) projected from the input state
};

// One refiner iteration. dims stays fixed across iterations by contract;
// the caller passes the same var every time.
RefineStepOut refine_step(ParamBinder& bind, const SupNerfModel& model,
                          const TapePoseState& state, Var pose_code, Var dims,
                          const CameraIntrinsics& k, const PixelRect& roi);

struct RefineTrajectory {
  std::vector<PoseState> states;  // iterations + 1 entries
  std::vector<Var> corners;       // iterations entries, input-state corners
  TapePoseState final_state;
};

RefineTrajectory refine(ParamBinder& bind, const SupNerfModel& model,
                        const PoseState& state0, Var pose_code, Var dims,
                        const CameraIntrinsics& k, const PixelRect& roi,
                        int iterations);

// --- ablation baselines ------------------------------------------------------

struct DirectPoseOut {
  TapePoseState state;
  Var corners;  // (8,2) projected from the predicted pose
};

// One-shot pose regression from the pose code (Table-5-style "MLP Pose").
// Depth comes out as init_depth * exp(raw).
DirectPoseOut mlp_direct_pose(ParamBinder& bind, const SupNerfModel& model,
                              Var pose_code, Var dims,
                              const CameraIntrinsics& k, const PixelRect& roi,
                              double init_depth = 20.0);

struct PnPResult {
  PoseO2C pose;
  bool diverged = false;
  double reproj_error = 0;  // mean pixels at the returned iterate
  int iterations = 0;
};

// Gauss-Newton over (R, T) from the 8 matched 2D-3D box correspondences.
// Starts at identity rotation, translation (0,0,init_depth). Flags
// divergence when the reprojection error grows three iterations in a row
// and returns the last iterate.
PnPResult pnp_gauss_newton(const BoxCorners2D& corners,
                           const BoxDimensions& dims,
                           const CameraIntrinsics& k, int iterations = 20,
                           double init_depth = 20.0);

}  // namespace supnerf
