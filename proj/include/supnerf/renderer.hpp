#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "supnerf/geometry.hpp"
#include "supnerf/nets.hpp"
#include "supnerf/tape.hpp"
#include "supnerf/tape_geometry.hpp"

namespace supnerf {

struct RenderConfig {
  int samples_per_ray = 64;
  int patch = 32;
  std::array<double, 3> background = {0.5, 0.5, 0.5};

  void validate(int image_size) const;
};

// Sampling positions along each ray. Midpoint is deterministic (inference
// and metrics); jitter is seeded per (pixel, iteration) so training renders
// are stochastic but replayable.
struct Stratify {
  bool jitter = false;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;

  static Stratify midpoint() { return Stratify{}; }
  static Stratify jittered(std::uint64_t seed, std::uint64_t iteration) {
    return Stratify{true, seed, iteration};
  }
};

struct RenderOutput {
  int patch = 0;
  // Tape handles over the rays that hit the box, in hit order.
  Var rgb;        // (Nhit, 3)
  Var occupancy;  // (Nhit)
  Var depth;      // (Nhit) camera-frame z, meters
  Var residual;   // (Nhit) leftover transmittance
  std::vector<std::int64_t> hit_pixels;  // patch-linear index per hit ray

  // Materialized full-patch views (background / zero filled on misses).
  Tensor rgb_full;    // (P,P,3)
  Tensor occ_full;    // (P,P)
  Tensor depth_full;  // (P,P), 0 where invalid
  std::vector<std::uint8_t> hit_full;  // ray-box intersection flag per pixel

  std::int64_t hit_count() const {
    return static_cast<std::int64_t>(hit_pixels.size());
  }
};

// Alpha compositing of per-ray samples. sigma_delta is sigma_i * delta_i
// (R,S); colors (R,S,3); t_vals (R,S) are sample positions in meters.
struct CompositeOut {
  Var rgb;         // (R,3) including background contribution
  Var occupancy;   // (R)
  Var expected_t;  // (R) occupancy-normalized expected termination
  Var residual;    // (R)
};

CompositeOut composite(Tape& t, Var sigma_delta, Var colors, Var t_vals,
                       const std::array<double, 3>& background);

// Ray bookkeeping for one render: which pixels hit the box and where the
// samples sit along each camera ray. These are the constants of the
// iteration; gradients flow only through the object-frame transform of the
// fixed camera-frame sample points.
struct RayPlan {
  int patch = 0;
  std::vector<std::int64_t> hit_pixels;
  std::vector<double> ray_dirs;   // (R*3) unit camera-frame directions
  std::vector<double> t_samples;  // (R*S) meters along the ray
  std::vector<double> deltas;     // (R) uniform bin width
  std::vector<double> cos_z;      // (R) z of the unit direction
  std::int64_t rays() const {
    return static_cast<std::int64_t>(hit_pixels.size());
  }
};

RayPlan plan_rays(const PoseC2O& pose, const BoxDimensions& box,
                  const CameraIntrinsics& k, const RenderConfig& cfg,
                  const Stratify& strat);

// Differentiable pass over a fixed plan.
RenderOutput render_with_plan(ParamBinder& bind, const SupNerfModel& model,
                              const TapePose& pose_c2o, Var dims,
                              Var shape_code, Var texture_code,
                              const RenderConfig& cfg, const RayPlan& plan);

// Renders a patch through the conditional field. The pose enters as tape
// nodes so gradients can flow to whatever parameterizes it; dims likewise
// (constant leaf when frozen). Ray/box clipping bounds are computed from
// the current numeric values and treated as constants of the iteration.
RenderOutput render_patch(ParamBinder& bind, const SupNerfModel& model,
                          const TapePose& pose_c2o, Var dims,
                          const CameraIntrinsics& k, Var shape_code,
                          Var texture_code, const RenderConfig& cfg,
                          const Stratify& strat);

}  // namespace supnerf
