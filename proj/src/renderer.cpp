#include "supnerf/renderer.hpp"

#include <cmath>

#include "supnerf/errors.hpp"
#include "supnerf/rng.hpp"

namespace supnerf {

void RenderConfig::validate(int image_size) const {
  if (samples_per_ray < 2)
    throw std::invalid_argument("RenderConfig: samples_per_ray must be >= 2");
  if (patch < 1 || image_size % patch != 0)
    throw std::invalid_argument(
        "RenderConfig: patch must divide the input resolution");
}

CompositeOut composite(Tape& t, Var sigma_delta, Var colors, Var t_vals,
                       const std::array<double, 3>& background) {
  const Tensor& sd = t.value(sigma_delta);
  if (sd.rank() != 2) throw ShapeError("composite: sigma_delta must be (R,S)");
  std::int64_t R = sd.extent(0), S = sd.extent(1);

  // T_i = exp(-sum_{j<i} sigma_j delta_j), alpha_i = 1 - exp(-sigma_i delta_i).
  Var acc = t.cumsum_exclusive(sigma_delta, 1);
  Var trans = t.exp_op(t.neg(acc));
  Var alpha = t.add_const(t.neg(t.exp_op(t.neg(sigma_delta))), 1.0);
  Var w = t.mul(trans, alpha);  // (R,S)

  CompositeOut out;
  out.occupancy = t.sum_axis(w, 1);
  out.residual = t.exp_op(t.neg(t.sum_axis(sigma_delta, 1)));

  Var colors_rs3 = t.reshape(colors, {R, S, 3});
  std::vector<Var> channels;
  for (int c = 0; c < 3; ++c) {
    Var ch = t.reshape(t.slice(colors_rs3, 2, c, 1), {R, S});
    Var fg = t.sum_axis(t.mul(w, ch), 1);
    Var bg = t.mul_const(out.residual, background[c]);
    channels.push_back(t.reshape(t.add(fg, bg), {R, 1}));
  }
  out.rgb = t.concat(channels, 1);

  Var wt = t.sum_axis(t.mul(w, t_vals), 1);
  out.expected_t = t.div(wt, t.clamp_min(out.occupancy, 1e-6));
  return out;
}

RayPlan plan_rays(const PoseC2O& pose, const BoxDimensions& box,
                  const CameraIntrinsics& k, const RenderConfig& cfg,
                  const Stratify& strat) {
  cfg.validate(k.width);
  box.validate("plan_rays");
  PoseO2C o2c = c2o_to_o2c(pose);
  if (o2c.t.z() <= 1e-6)
    throw BehindCameraError("render: object center behind camera");

  const int P = cfg.patch;
  const int S = cfg.samples_per_ray;
  // Patch pixel (pi,pj) aligns with the center of image pixel
  // (pi*stride + stride/2, pj*stride + stride/2), matching the
  // center-sampled downscaling used by the losses.
  const int stride = k.width / P;

  RayPlan plan;
  plan.patch = P;
  for (int pi = 0; pi < P; ++pi) {
    for (int pj = 0; pj < P; ++pj) {
      double u = pj * stride + stride / 2 + 0.5;
      double v = pi * stride + stride / 2 + 0.5;
      Vec3 dir_c = k.unproject_dir(u, v).normalized();
      Ray ray;
      ray.origin = pose.t;
      ray.dir = pose.rot.m * dir_c;
      auto clip = ray_box_clip(ray, box);
      if (!clip.has_value()) continue;
      double t0 = std::max(clip->first, 1e-6);
      double t1 = clip->second;
      if (t1 <= t0) continue;
      std::int64_t pixel = pi * P + pj;
      plan.hit_pixels.push_back(pixel);
      double width = (t1 - t0) / S;
      plan.deltas.push_back(width);
      plan.cos_z.push_back(dir_c.z());
      plan.ray_dirs.insert(plan.ray_dirs.end(),
                           {dir_c.x(), dir_c.y(), dir_c.z()});
      if (strat.jitter) {
        Rng rng = Rng::derive(strat.seed ^ 0x52454e44ull,
                              static_cast<std::uint64_t>(pixel),
                              strat.iteration);
        for (int s = 0; s < S; ++s)
          plan.t_samples.push_back(t0 + (s + rng.uniform()) * width);
      } else {
        for (int s = 0; s < S; ++s)
          plan.t_samples.push_back(t0 + (s + 0.5) * width);
      }
    }
  }
  return plan;
}

RenderOutput render_with_plan(ParamBinder& bind, const SupNerfModel& model,
                              const TapePose& pose_c2o, Var dims,
                              Var shape_code, Var texture_code,
                              const RenderConfig& cfg, const RayPlan& plan) {
  Tape& t = bind.tape();
  const int P = plan.patch;
  const int S = cfg.samples_per_ray;

  RenderOutput out;
  out.patch = P;
  out.hit_pixels = plan.hit_pixels;
  out.hit_full.assign(P * P, 0);
  for (std::int64_t p : plan.hit_pixels) out.hit_full[p] = 1;

  out.rgb_full = Tensor({P, P, 3});
  for (int p = 0; p < P * P; ++p)
    for (int c = 0; c < 3; ++c) out.rgb_full[p * 3 + c] = cfg.background[c];
  out.occ_full = Tensor::zeros({P, P});
  out.depth_full = Tensor::zeros({P, P});

  std::int64_t R = plan.rays();
  if (R == 0) return out;

  // Camera-frame sample points are the constants of the chain; the pose
  // enters only through X_o = R_c2o X_c + T_c2o.
  Tensor xc({R * S, 3});
  for (std::int64_t r = 0; r < R; ++r)
    for (int s = 0; s < S; ++s) {
      double tv = plan.t_samples[r * S + s];
      for (int a = 0; a < 3; ++a)
        xc.at(r * S + s, a) = tv * plan.ray_dirs[r * 3 + a];
    }
  Var x_c = t.constant(std::move(xc));
  Var x_o = t.add(t.matmul(x_c, t.transpose(pose_c2o.rot_c2o)),
                  t.broadcast(pose_c2o.t_c2o, {R * S, 3}));

  Var diag = t.sqrt_op(t.sum(t.mul(dims, dims)));
  Var x_n = t.div(x_o, t.broadcast(diag, {R * S, 3}));

  auto [sigma, rgb] = model.nerf_decode(bind, x_n, shape_code, texture_code);

  Tensor delta_rs({R, S});
  for (std::int64_t r = 0; r < R; ++r)
    for (int s = 0; s < S; ++s) delta_rs.at(r, s) = plan.deltas[r];
  Var sigma_delta =
      t.mul(t.reshape(sigma, {R, S}), t.constant(std::move(delta_rs)));
  Var t_vals = t.constant(Tensor({R, S}, plan.t_samples));

  CompositeOut comp = composite(t, sigma_delta, rgb, t_vals, cfg.background);
  out.rgb = comp.rgb;
  out.occupancy = comp.occupancy;
  out.residual = comp.residual;
  Var cosz = t.constant(Tensor({R}, plan.cos_z));
  out.depth = t.mul(comp.expected_t, cosz);

  const Tensor& rgb_v = t.value(out.rgb);
  const Tensor& occ_v = t.value(out.occupancy);
  const Tensor& depth_v = t.value(out.depth);
  for (std::int64_t r = 0; r < R; ++r) {
    std::int64_t p = out.hit_pixels[r];
    for (int c = 0; c < 3; ++c) out.rgb_full[p * 3 + c] = rgb_v.at(r, c);
    out.occ_full[p] = occ_v[r];
    out.depth_full[p] = depth_v[r];
  }
  return out;
}

RenderOutput render_patch(ParamBinder& bind, const SupNerfModel& model,
                          const TapePose& pose_c2o, Var dims,
                          const CameraIntrinsics& k, Var shape_code,
                          Var texture_code, const RenderConfig& cfg,
                          const Stratify& strat) {
  Tape& t = bind.tape();
  PoseC2O pose_val = tape_pose_value(t, pose_c2o);
  const Tensor& dims_v = t.value(dims);
  BoxDimensions box{dims_v[0], dims_v[1], dims_v[2]};
  RayPlan plan = plan_rays(pose_val, box, k, cfg, strat);
  return render_with_plan(bind, model, pose_c2o, dims, shape_code,
                          texture_code, cfg, plan);
}

}  // namespace supnerf
