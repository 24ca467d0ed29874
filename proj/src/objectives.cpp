#include "supnerf/objectives.hpp"

#include <cmath>

#include "supnerf/errors.hpp"

namespace supnerf {

namespace {

constexpr double kBceEps = 1e-6;

double clamped_log(double x) { return std::log(x > kBceEps ? x : kBceEps); }

}  // namespace

PhotometricLosses photometric_losses(Tape& t, const RenderOutput& render,
                                     const Tensor& image_patch,
                                     const Tensor& mask_patch,
                                     const std::array<double, 3>& background) {
  const int P = render.patch;
  if (image_patch.shape() != std::vector<std::int64_t>{P, P, 3} ||
      mask_patch.shape() != std::vector<std::int64_t>{P, P})
    throw ShapeError("photometric_losses: patch shape mismatch, render " +
                     std::to_string(P) + ", image " +
                     Tensor::shape_str(image_patch.shape()) + ", mask " +
                     Tensor::shape_str(mask_patch.shape()));

  // Hit-row lookup per pixel.
  std::vector<std::int64_t> hit_row(P * P, -1);
  for (std::int64_t r = 0; r < render.hit_count(); ++r)
    hit_row[render.hit_pixels[r]] = r;

  std::vector<std::int64_t> fg_rows, known_rows;
  std::vector<double> fg_targets, known_targets;
  double miss_rgb_sq = 0.0;
  double miss_bce = 0.0;
  std::int64_t n_fg = 0, n_known = 0;
  for (std::int64_t p = 0; p < P * P; ++p) {
    double m = mask_patch[p];
    bool fg = m == kMaskForeground;
    bool bg = m == kMaskBackground;
    if (fg) {
      ++n_fg;
      if (hit_row[p] >= 0) {
        fg_rows.push_back(hit_row[p]);
        for (int c = 0; c < 3; ++c) fg_targets.push_back(image_patch[p * 3 + c]);
      } else {
        for (int c = 0; c < 3; ++c) {
          double d = background[c] - image_patch[p * 3 + c];
          miss_rgb_sq += d * d;
        }
      }
    }
    if (fg || bg) {
      ++n_known;
      if (hit_row[p] >= 0) {
        known_rows.push_back(hit_row[p]);
        known_targets.push_back(fg ? 1.0 : 0.0);
      } else {
        // occupancy identically zero on a miss
        miss_bce += fg ? -clamped_log(0.0) : 0.0;
      }
    }
  }

  PhotometricLosses out;
  out.no_foreground = n_fg == 0;
  out.all_unknown = n_known == 0;

  if (n_fg == 0) {
    out.rgb = t.constant_scalar(0.0);
  } else {
    Var acc = t.constant_scalar(miss_rgb_sq);
    if (!fg_rows.empty()) {
      Var pred = t.gather_rows(render.rgb, fg_rows);
      Var target = t.constant(
          Tensor({static_cast<std::int64_t>(fg_rows.size()), 3}, fg_targets));
      acc = t.add(acc, t.sum(t.square_diff(pred, target)));
    }
    out.rgb = t.mul_const(acc, 1.0 / (3.0 * n_fg));
  }

  if (n_known == 0) {
    out.occ = t.constant_scalar(0.0);
  } else {
    Var acc = t.constant_scalar(miss_bce);
    if (!known_rows.empty()) {
      std::int64_t n = static_cast<std::int64_t>(known_rows.size());
      Var occ = t.reshape(
          t.gather_rows(t.reshape(render.occupancy, {render.hit_count(), 1}),
                        known_rows),
          {n});
      Var target = t.constant(Tensor({n}, known_targets));
      Var ones = t.constant(Tensor::full({n}, 1.0));
      Var pos = t.mul(target, t.log_op(t.clamp_min(occ, kBceEps)));
      Var negt = t.sub(ones, target);
      Var neg = t.mul(negt, t.log_op(t.clamp_min(t.sub(ones, occ), kBceEps)));
      acc = t.add(acc, t.neg(t.sum(t.add(pos, neg))));
    }
    out.occ = t.mul_const(acc, 1.0 / static_cast<double>(n_known));
  }
  return out;
}

Var corner_loss(Tape& t, Var pred, const BoxCorners2D& gt) {
  if (t.value(pred).shape() != std::vector<std::int64_t>{8, 2})
    throw ShapeError("corner_loss: expected (8,2) corners");
  std::vector<double> g;
  g.reserve(16);
  for (const auto& p : gt.pts) {
    g.push_back(p.x());
    g.push_back(p.y());
  }
  Var target = t.constant(Tensor({8, 2}, g));
  Var sq = t.square_diff(pred, target);
  return t.mean(t.sqrt_op(t.sum_axis(sq, 1)));
}

double corner_loss_value(const BoxCorners2D& a, const BoxCorners2D& b) {
  double s = 0;
  for (int i = 0; i < 8; ++i) s += (a.pts[i] - b.pts[i]).norm();
  return s / 8.0;
}

Var total_train_loss(Tape& t, Var rgb, Var occ, Var pose_direct,
                     const std::vector<Var>& pose_iters,
                     std::optional<Var> pose_mlp, const LossWeights& w) {
  Var pose = pose_direct;
  for (Var it : pose_iters) pose = t.add(pose, it);
  if (pose_mlp) pose = t.add(pose, *pose_mlp);
  return t.add(t.add(rgb, t.mul_const(occ, w.w_occ)),
               t.mul_const(pose, w.w_pose));
}

Var total_infer_loss(Tape& t, Var rgb, Var occ, double w_occ) {
  return t.add(rgb, t.mul_const(occ, w_occ));
}

std::optional<double> psnr_db(const Tensor& a, const Tensor& b,
                              const Tensor& mask) {
  if (!a.same_shape(b)) throw ShapeError("psnr: image shape mismatch");
  std::int64_t pixels = mask.numel();
  if (a.numel() != pixels * 3) throw ShapeError("psnr: mask shape mismatch");
  double se = 0;
  std::int64_t n = 0;
  for (std::int64_t p = 0; p < pixels; ++p) {
    if (mask[p] != kMaskForeground) continue;
    for (int c = 0; c < 3; ++c) {
      double d = a[p * 3 + c] - b[p * 3 + c];
      se += d * d;
    }
    n += 3;
  }
  if (n == 0) return std::nullopt;
  double mse = se / n;
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

std::optional<double> depth_error_m(const Tensor& render_depth,
                                    const Tensor& render_occ,
                                    const std::vector<std::uint8_t>& hit,
                                    const Tensor& gt_depth) {
  if (!render_depth.same_shape(gt_depth))
    throw ShapeError("depth_error: shape mismatch");
  double acc = 0;
  std::int64_t n = 0;
  for (std::int64_t p = 0; p < render_depth.numel(); ++p) {
    if (gt_depth[p] <= 0.0) continue;
    if (!hit[p] || render_occ[p] <= 0.5) continue;
    acc += std::fabs(render_depth[p] - gt_depth[p]);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

Tensor downsample_center_hwc(const Tensor& img, int patch) {
  std::int64_t H = img.extent(0), W = img.extent(1), C = img.extent(2);
  if (H % patch != 0 || W % patch != 0)
    throw ShapeError("downsample: patch must divide the image");
  std::int64_t s = H / patch;
  Tensor out({patch, patch, C});
  for (int pi = 0; pi < patch; ++pi)
    for (int pj = 0; pj < patch; ++pj)
      for (std::int64_t c = 0; c < C; ++c)
        out[(pi * patch + pj) * C + c] =
            img[((pi * s + s / 2) * W + (pj * s + s / 2)) * C + c];
  return out;
}

Tensor downsample_center_hw(const Tensor& img, int patch) {
  std::int64_t H = img.extent(0), W = img.extent(1);
  if (H % patch != 0 || W % patch != 0)
    throw ShapeError("downsample: patch must divide the image");
  std::int64_t s = H / patch;
  Tensor out({patch, patch});
  for (int pi = 0; pi < patch; ++pi)
    for (int pj = 0; pj < patch; ++pj)
      out[pi * patch + pj] = img[(pi * s + s / 2) * W + (pj * s + s / 2)];
  return out;
}

}  // namespace supnerf
