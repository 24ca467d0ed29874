#pragma once

#include <optional>
#include <string>
#include <vector>

#include "supnerf/geometry.hpp"
#include "supnerf/renderer.hpp"
#include "supnerf/tape.hpp"
#include "supnerf/tensor.hpp"

namespace supnerf {

struct LossWeights {
  double w_occ = 0.1;
  double w_pose = 0.01;
};

// Mask classes at any resolution.
constexpr double kMaskBackground = 0.0;
constexpr double kMaskUnknown = 0.5;
constexpr double kMaskForeground = 1.0;

struct PhotometricLosses {
  Var rgb;  // scalar: mean squared color error over foreground pixels
  Var occ;  // scalar: clamped BCE of occupancy over known pixels
  bool no_foreground = false;
  bool all_unknown = false;
};

// image_patch (P,P,3), mask_patch (P,P) in {0, 0.5, 1}; unknown pixels are
// excluded from both terms, missed rays contribute constants.
PhotometricLosses photometric_losses(Tape& t, const RenderOutput& render,
                                     const Tensor& image_patch,
                                     const Tensor& mask_patch,
                                     const std::array<double, 3>& background);

// Mean matched-corner distance in pixels: (1/8) sum_i |p_i - g_i|.
Var corner_loss(Tape& t, Var pred, const BoxCorners2D& gt);
double corner_loss_value(const BoxCorners2D& a, const BoxCorners2D& b);

// L_train = rgb + w_occ*occ + w_pose*(direct + sum_t iter_t [+ mlp]).
Var total_train_loss(Tape& t, Var rgb, Var occ, Var pose_direct,
                     const std::vector<Var>& pose_iters,
                     std::optional<Var> pose_mlp, const LossWeights& w);

// L_infer = rgb + w_occ*occ.
Var total_infer_loss(Tape& t, Var rgb, Var occ, double w_occ);

// --- metrics ---------------------------------------------------------------

// Foreground-masked PSNR in dB, capped at 99 when MSE < 1e-10. Returns
// nullopt when the mask has no foreground.
std::optional<double> psnr_db(const Tensor& a, const Tensor& b,
                              const Tensor& mask);

// Mean absolute depth difference over pixels with valid ground truth
// (depth > 0) AND a rendered hit with occupancy above 0.5. nullopt when the
// valid set is empty.
std::optional<double> depth_error_m(const Tensor& render_depth,
                                    const Tensor& render_occ,
                                    const std::vector<std::uint8_t>& hit,
                                    const Tensor& gt_depth);

// Center sampling consistent with the renderer's patch ray layout.
Tensor downsample_center_hwc(const Tensor& img, int patch);
Tensor downsample_center_hw(const Tensor& img, int patch);

struct MetricsRow {
  std::string stage;  // "ff" or "ngpr"
  int iter = 0;
  std::optional<double> psnr;
  std::optional<double> de;
  double re = 0;
  double te = 0;
  double loss = 0;
};

}  // namespace supnerf
