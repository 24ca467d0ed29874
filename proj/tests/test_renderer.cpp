#include <doctest.h>

#include <cmath>

#include "supnerf/errors.hpp"
#include "supnerf/gradcheck.hpp"
#include "supnerf/objectives.hpp"
#include "supnerf/pose.hpp"
#include "supnerf/renderer.hpp"
#include "supnerf/rng.hpp"

using namespace supnerf;

namespace {

NetConfig small_config() {
  NetConfig cfg;
  cfg.latent = 32;
  cfg.image_size = 128;
  cfg.enc_widths = {4, 8, 8, 16, 16};
  cfg.pe_freqs = 4;
  return cfg;
}

CameraIntrinsics test_k() {
  CameraIntrinsics k;
  k.fx = k.fy = 110;
  k.cx = k.cy = 64;
  k.width = k.height = 128;
  return k;
}

Tensor random_code(std::int64_t n, Rng& rng) {
  Tensor t({n});
  for (std::int64_t i = 0; i < n; ++i) t[i] = rng.normal() * 0.3;
  return t;
}

struct Scene {
  SupNerfModel model;
  CameraIntrinsics k;
  BoxDimensions dims{1.6, 1.9, 4.2};
  PoseO2C pose;
  Tensor shape_code;
  Tensor texture_code;

  explicit Scene(std::uint64_t seed) : model(small_config()), k(test_k()) {
    model.init_params(seed);
    Rng rng(seed + 1);
    shape_code = random_code(32, rng);
    texture_code = random_code(32, rng);
    pose.rot = exp_so3(AxisAngle{Vec3(0.1, 0.7, -0.05)});
    pose.t = Vec3(0.4, -0.2, 11.0);
  }
};

RenderOutput render_const(Tape& t, Scene& s, const RenderConfig& cfg,
                          const Stratify& strat) {
  ParamBinder bind(t, false);
  TapePose pose = tape_pose_const(t, o2c_to_c2o(s.pose));
  Var dims = t.constant(Tensor({3}, {s.dims.h, s.dims.w, s.dims.l}));
  return render_patch(bind, s.model, pose, dims, s.k,
                      t.constant(s.shape_code), t.constant(s.texture_code),
                      cfg, strat);
}

}  // namespace

TEST_CASE("composite reproduces the two-sample hand result") {
  Tape t;
  // alpha = 0.5 per sample -> sigma*delta = ln 2.
  double sd = std::log(2.0);
  Var sigma_delta = t.constant(Tensor({1, 2}, {sd, sd}));
  Var colors = t.constant(Tensor({2, 3}, {1.0, 0.0, 0.2, 0.0, 1.0, 0.4}));
  Var t_vals = t.constant(Tensor({1, 2}, {5.0, 6.0}));
  CompositeOut out = composite(t, sigma_delta, colors, t_vals, {0.5, 0.5, 0.5});
  CHECK(t.value(out.occupancy)[0] == doctest::Approx(0.75).epsilon(1e-12));
  // rgb = 0.5*c0 + 0.25*c1 + 0.25*bg
  CHECK(t.value(out.rgb).at(0, 0) ==
        doctest::Approx(0.5 * 1.0 + 0.25 * 0.0 + 0.25 * 0.5).epsilon(1e-12));
  CHECK(t.value(out.rgb).at(0, 1) ==
        doctest::Approx(0.5 * 0.0 + 0.25 * 1.0 + 0.25 * 0.5).epsilon(1e-12));
  CHECK(t.value(out.rgb).at(0, 2) ==
        doctest::Approx(0.5 * 0.2 + 0.25 * 0.4 + 0.25 * 0.5).epsilon(1e-12));
}

TEST_CASE("composite with an opaque front sample returns its color") {
  Tape t;
  Var sigma_delta = t.constant(Tensor({1, 2}, {60.0, 1.0}));
  Var colors = t.constant(Tensor({2, 3}, {0.9, 0.1, 0.3, 0.0, 0.0, 0.0}));
  Var t_vals = t.constant(Tensor({1, 2}, {4.0, 5.0}));
  CompositeOut out = composite(t, sigma_delta, colors, t_vals, {0.5, 0.5, 0.5});
  CHECK(t.value(out.occupancy)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.value(out.rgb).at(0, 0) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(t.value(out.rgb).at(0, 2) == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("occupancy plus residual transmittance is exactly one") {
  Rng rng(3);
  Tape t;
  Tensor sd({16, 24});
  for (std::int64_t i = 0; i < sd.numel(); ++i)
    sd[i] = rng.uniform(0.0, 3.0);
  Tensor colors({16 * 24, 3});
  for (std::int64_t i = 0; i < colors.numel(); ++i) colors[i] = rng.uniform();
  Tensor tv({16, 24});
  for (std::int64_t i = 0; i < tv.numel(); ++i) tv[i] = 5.0 + 0.1 * i;
  CompositeOut out = composite(t, t.constant(sd), t.constant(colors),
                               t.constant(tv), {0.5, 0.5, 0.5});
  for (int r = 0; r < 16; ++r)
    CHECK(std::fabs(t.value(out.occupancy)[r] + t.value(out.residual)[r] -
                    1.0) < 1e-9);
}

TEST_CASE("scaling density up never decreases occupancy") {
  Rng rng(5);
  Tensor sd({8, 16});
  for (std::int64_t i = 0; i < sd.numel(); ++i) sd[i] = rng.uniform(0.0, 1.0);
  Tensor colors({8 * 16, 3});
  Tensor tv({8, 16});
  for (std::int64_t i = 0; i < tv.numel(); ++i) tv[i] = 1.0 + 0.05 * i;
  auto occ_at = [&](double scale) {
    Tape t;
    Tensor scaled = sd;
    for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= scale;
    CompositeOut out = composite(t, t.constant(scaled), t.constant(colors),
                                 t.constant(tv), {0.5, 0.5, 0.5});
    return t.value(out.occupancy);
  };
  Tensor base = occ_at(1.0);
  for (double kmul : {1.5, 2.0, 5.0}) {
    Tensor up = occ_at(kmul);
    for (std::int64_t r = 0; r < 8; ++r) CHECK(up[r] >= base[r] - 1e-12);
  }
}

TEST_CASE("empty field renders background and zero occupancy") {
  Scene s(7);
  s.model.params().get("dec.sigma.b").value[0] = -40.0;
  RenderConfig cfg;
  cfg.patch = 8;
  cfg.samples_per_ray = 16;
  Tape t;
  RenderOutput out = render_const(t, s, cfg, Stratify::midpoint());
  REQUIRE(out.hit_count() > 0);
  for (int p = 0; p < 64; ++p) {
    CHECK(out.occ_full[p] < 1e-9);
    for (int c = 0; c < 3; ++c)
      CHECK(out.rgb_full[p * 3 + c] == doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("render is deterministic under a fixed stratification seed") {
  Scene s(9);
  RenderConfig cfg;
  cfg.patch = 8;
  cfg.samples_per_ray = 8;
  Tensor a, b;
  {
    Tape t;
    a = render_const(t, s, cfg, Stratify::jittered(123, 4)).rgb_full;
  }
  {
    Tape t;
    b = render_const(t, s, cfg, Stratify::jittered(123, 4)).rgb_full;
  }
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("doubling samples changes a smooth field by under 2 percent") {
  Scene s(11);
  RenderConfig lo, hi;
  lo.patch = hi.patch = 16;
  lo.samples_per_ray = 32;
  hi.samples_per_ray = 64;
  Tape t1, t2;
  Tensor a = render_const(t1, s, lo, Stratify::midpoint()).rgb_full;
  Tensor b = render_const(t2, s, hi, Stratify::midpoint()).rgb_full;
  double mean_abs = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    mean_abs += std::fabs(a[i] - b[i]);
  mean_abs /= a.numel();
  CHECK(mean_abs < 0.02);
}

TEST_CASE("behind-camera pose raises the dedicated error") {
  Scene s(13);
  s.pose.t = Vec3(0, 0, -5);
  RenderConfig cfg;
  cfg.patch = 8;
  cfg.samples_per_ray = 8;
  Tape t;
  CHECK_THROWS_AS(render_const(t, s, cfg, Stratify::midpoint()),
                  BehindCameraError);
}

TEST_CASE("empty field gives zero pose gradient") {
  Scene s(15);
  s.model.params().get("dec.sigma.b").value[0] = -40.0;
  // Close object so the sparse 4x4 ray grid still crosses the box.
  s.pose.rot = exp_so3(AxisAngle{Vec3(0.1, 0.3, 0.0)});
  s.pose.t = Vec3(0, 0, 5.2);
  RenderConfig cfg;
  cfg.patch = 4;
  cfg.samples_per_ray = 8;
  CameraIntrinsics k = s.k;

  Tape t;
  ParamBinder bind(t, false);
  O2CRelativeVars vars;
  PoseState st;
  st.rot = s.pose.rot;
  Vec2 uv = project(k, s.pose.t);
  st.u = uv.x();
  st.v = uv.y();
  st.z = s.pose.t.z();
  TapePose pose = tape_pose_o2c_relative(t, st.rot, st.u, st.v, st.z, k, &vars);
  Var dims = t.constant(Tensor({3}, {s.dims.h, s.dims.w, s.dims.l}));
  RenderOutput out =
      render_patch(bind, s.model, pose, dims, k, t.constant(s.shape_code),
                   t.constant(s.texture_code), cfg, Stratify::midpoint());
  REQUIRE(out.hit_count() > 0);
  // Any loss over the render: use mean occupancy plus mean rgb.
  Var loss = t.add(t.mean(out.occupancy), t.mean(out.rgb));
  t.backward(loss);
  for (Var v : {vars.dq, vars.dv, vars.dlog_rho}) {
    Tensor g = t.grad(v);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      CHECK(std::fabs(g[i]) < 1e-12);
  }
}

TEST_CASE("pose gradients match central differences on a 4x4 patch") {
  Scene s(17);
  s.pose.rot = exp_so3(AxisAngle{Vec3(0.1, 0.3, 0.0)});
  s.pose.t = Vec3(0, 0, 5.2);
  RenderConfig cfg;
  cfg.patch = 4;
  cfg.samples_per_ray = 8;
  CameraIntrinsics k = s.k;
  Vec2 uv = project(k, s.pose.t);
  PoseState st;
  st.rot = s.pose.rot;
  st.u = uv.x();
  st.v = uv.y();
  st.z = s.pose.t.z();

  // Freeze the ray plan at the base pose: the checked function is the
  // discretized render loss one optimizer step sees.
  RayPlan plan = plan_rays(o2c_to_c2o(st.materialize(k)), s.dims, k, cfg,
                           Stratify::midpoint());
  REQUIRE(plan.rays() > 0);

  CheckedFn f = [&](Tape& t, const std::vector<Var>& v) {
    ParamBinder bind(t, false);
    TapePose pose =
        tape_pose_o2c_relative_from(t, st.rot, st.u, st.v, st.z, k, v[0], v[1],
                                    v[2]);
    Var dims = t.constant(Tensor({3}, {s.dims.h, s.dims.w, s.dims.l}));
    RenderOutput out = render_with_plan(bind, s.model, pose, dims,
                                        t.constant(s.shape_code),
                                        t.constant(s.texture_code), cfg, plan);
    return t.add(t.mean(out.rgb), t.mean(out.occupancy));
  };
  auto report = grad_check(f,
                           {{"dq", Tensor::zeros({3})},
                            {"dv", Tensor::zeros({2})},
                            {"dlog_rho", Tensor::zeros({1})}},
                           1e-4, 1e-3, 3);
  INFO("worst rel err " << report.worst());
  CHECK(report.pass);
}

TEST_CASE("o2c and c2o parameterizations give different rotation gradients") {
  Scene s(19);
  RenderConfig cfg;
  cfg.patch = 8;
  cfg.samples_per_ray = 8;
  CameraIntrinsics k = s.k;
  Vec2 uv = project(k, s.pose.t);
  PoseC2O c2o = o2c_to_c2o(s.pose);

  // O2C relative-space gradient of the render loss.
  Vec3 g_o2c;
  {
    Tape t;
    ParamBinder bind(t, false);
    O2CRelativeVars vars;
    TapePose pose = tape_pose_o2c_relative(t, s.pose.rot, uv.x(), uv.y(),
                                           s.pose.t.z(), k, &vars);
    Var dims = t.constant(Tensor({3}, {s.dims.h, s.dims.w, s.dims.l}));
    RenderOutput out =
        render_patch(bind, s.model, pose, dims, k, t.constant(s.shape_code),
                     t.constant(s.texture_code), cfg, Stratify::midpoint());
    t.backward(t.add(t.mean(out.rgb), t.mean(out.occupancy)));
    Tensor g = t.grad(vars.dq);
    g_o2c = Vec3(g[0], g[1], g[2]);
  }

  // C2O local-delta gradient: rotation perturbs R_c2o directly while the
  // object-frame camera position stays fixed.
  Vec3 g_c2o;
  {
    Tape t;
    ParamBinder bind(t, false);
    Var dq = t.leaf(Tensor::zeros({3}), true);
    Tensor r0({3, 3});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r0.at(i, j) = c2o.rot.m(i, j);
    TapePose pose;
    pose.rot_c2o = t.matmul(exp_so3_tape(t, dq), t.constant(std::move(r0)));
    pose.t_c2o = t.constant(Tensor({3}, {c2o.t.x(), c2o.t.y(), c2o.t.z()}));
    Var dims = t.constant(Tensor({3}, {s.dims.h, s.dims.w, s.dims.l}));
    RenderOutput out =
        render_patch(bind, s.model, pose, dims, k, t.constant(s.shape_code),
                     t.constant(s.texture_code), cfg, Stratify::midpoint());
    t.backward(t.add(t.mean(out.rgb), t.mean(out.occupancy)));
    Tensor g = t.grad(dq);
    g_c2o = Vec3(g[0], g[1], g[2]);
  }

  // A pure rotation-matrix perturbation maps as dq_c2o = -R0^T dq_o2c; if
  // the two optimizations were equivalent the mapped gradients would agree.
  Vec3 mapped = -(s.pose.rot.m * g_c2o);
  CHECK((g_o2c - mapped).cwiseAbs().maxCoeff() > 1e-6);
}
