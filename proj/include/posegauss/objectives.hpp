#pragma once

#include "posegauss/ops.hpp"

#include <utility>
#include <vector>

namespace pg {

struct LossWeights {
  double beta = 0.5;    // MAE weight
  double gamma = 0.5;   // (1 − SSIM) weight
  double lambda = 1.0;  // pose-fusion weight
  double mu = 0.9;      // depth-stage decay

  void validate() const;
};

struct LossReport {
  double render = 0, depth = 0, pose_fusion = 0, total = 0;
};

LossReport total_loss(double render, double depth, double pose_fusion);

struct SSIMConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Luma (0.299, 0.587, 0.114) of a 3-channel image; 1-channel input passes through.
template <typename Scalar>
Tensor3<Scalar> to_luma(const Tensor3<Scalar>& image);

/// Per-position SSIM over valid window placements: (H−w+1)×(W−w+1)×1.
template <typename Scalar>
Tensor3<Scalar> ssim_map(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b, const SSIMConfig& config = {});

/// Mean of ssim_map on luma images. Throws when the image is smaller than the window.
template <typename Scalar>
double ssim(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b, const SSIMConfig& config = {});

/// Differentiable SSIM of `pred` against a fixed target (scalar Var).
template <typename Scalar>
Var<Scalar> ssim_var(Var<Scalar> pred, const Tensor3<Scalar>& target, const SSIMConfig& config = {});

/// mean |pred − target| over every element.
template <typename Scalar>
Var<Scalar> mae(Var<Scalar> pred, const Tensor3<Scalar>& target);

/// Mean |pred − target| over pixels with mask > 0.5 (all channels); 0 when
/// the mask is empty.
template <typename Scalar>
Var<Scalar> masked_l1(Var<Scalar> pred, const Tensor3<Scalar>& target, const Tensor3<Scalar>& mask);

/// β·MAE + γ·(1 − SSIM).
template <typename Scalar>
Var<Scalar> render_loss(Var<Scalar> pred, const Tensor3<Scalar>& gt, double beta, double gamma,
                        const SSIMConfig& config = {});

/// Σ_t μ^{T−t}·masked_l1(d_t, gt). Empty mask gives 0 and a warning.
template <typename Scalar>
Var<Scalar> depth_loss(const std::vector<Var<Scalar>>& depths, const Tensor3<Scalar>& gt,
                       const Tensor3<Scalar>& mask, double mu);

/// λ·mean|f_joint − f_pose|; f_pose is treated as a constant target.
template <typename Scalar>
Var<Scalar> pose_fusion_loss(Var<Scalar> f_joint, Var<Scalar> f_pose, double lambda);

/// 10·log10(1/MSE), capped at 99 dB for identical images.
template <typename Scalar>
double psnr(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b);

inline constexpr double kPsnrCap = 99.0;

struct DeltaSSIM {
  double mean = 0, stddev = 0;
};

/// Default: ΔSSIM_t = |SSIM(pred_t, gt_t) − SSIM(pred_{t−1}, gt_{t−1})|.
/// `pred_to_pred`: ΔSSIM_t = |SSIM(pred_t, pred_{t−1}) − SSIM(gt_t, gt_{t−1})|.
/// Mean and population standard deviation over t. Needs ≥ 2 frames.
template <typename Scalar>
DeltaSSIM delta_ssim_stats(const std::vector<Tensor3<Scalar>>& pred, const std::vector<Tensor3<Scalar>>& gt,
                           bool pred_to_pred = false, const SSIMConfig& config = {});

/// Statistics of an SSIM sequence s_t: Δ_t = |s_t − s_{t−1}|.
DeltaSSIM delta_stats(const std::vector<double>& ssim_sequence);

struct DepthAccuracy {
  double epe = 0, pct_1px = 0;
};

/// Error in disparity-equivalent pixels, |s/pred − s/gt| with s = fx·baseline,
/// over mask > 0.5. Throws on an empty mask.
template <typename Scalar>
DepthAccuracy epe_1px(const Tensor3<Scalar>& pred, const Tensor3<Scalar>& gt, const Tensor3<Scalar>& mask,
                      double disparity_scale);

struct MetricReport {
  double psnr = 0, ssim = 0, mu_dssim = 0, sigma_dssim = 0, epe = 0, pct_1px = 0;
};

}  // namespace pg
