#pragma once

#include "posegauss/gaussmaps.hpp"
#include "posegauss/rng.hpp"

#include <optional>
#include <vector>

namespace pg {

struct RasterConfig {
  int tile = 16;
  double alpha_max = 0.99;          // per-splat opacity clamp
  double transmittance_min = 1e-4;  // stop before T would drop below this
  double alpha_min = 1.0 / 255.0;   // contributions below are skipped
  double cov_floor = 0.3;           // px² added to the 2D covariance
  double sigma_extent = 3.0;        // minimum ellipse extent (in σ) for binning/culling

  void validate() const;
};

/// Σ = R(q)·diag(s²)·R(q)ᵀ; q is normalised first.
template <typename Scalar>
Mat3<Scalar> compute_cov3d(const Eigen::Matrix<Scalar, 4, 1>& quat, const Vec3<Scalar>& scale);

template <typename Scalar>
Mat3<Scalar> quat_to_rotation(const Eigen::Matrix<Scalar, 4, 1>& q);

template <typename Scalar>
struct Splat2D {
  Vec2<Scalar> mean = Vec2<Scalar>::Zero();
  Scalar cov[3] = {0, 0, 0};    // a, b, c of [[a, b], [b, c]] (floor included)
  Scalar conic[3] = {0, 0, 0};  // inverse covariance, same layout
  Scalar depth = 0;
  Vec3<Scalar> rgb = Vec3<Scalar>::Zero();
  Scalar opacity = 0;
  Scalar extent_x = 0, extent_y = 0;  // half-widths of the bounding box (px)
  int index = -1;
};

/// EWA projection. Returns nullopt when the mean is behind the near plane,
/// the opacity can never reach alpha_min, or the bounding box misses the
/// frame. The box covers the ellipse at Mahalanobis radius
/// max(sigma_extent, sqrt(2·ln(opacity/alpha_min))), which contains every
/// pixel the compositor would not skip.
template <typename Scalar>
std::optional<Splat2D<Scalar>> project_splat(const GaussianCloud<Scalar>& cloud, int index,
                                             const Camera<Scalar>& camera, const RasterConfig& config);

template <typename Scalar>
struct RenderOutput {
  Tensor3<Scalar> rgb;    // H×W×3
  Tensor3<Scalar> alpha;  // H×W×1, accumulated opacity 1 − T_final
  Tensor3<Scalar> depth;  // H×W×1, Σ z·α·T (not normalised)
};

/// Sorted splats and per-tile index lists.
template <typename Scalar>
struct TileGrid {
  int tile = 16, tiles_x = 0, tiles_y = 0;
  std::vector<Splat2D<Scalar>> splats;  // visible splats, ascending (depth, index)
  std::vector<std::vector<int>> lists;  // per tile, indices into `splats`
};

template <typename Scalar>
TileGrid<Scalar> bin_splats(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                            const RasterConfig& config);

/// Tiled front-to-back compositing.
template <typename Scalar>
RenderOutput<Scalar> rasterize(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                               const Vec3<Scalar>& background, const RasterConfig& config = {});

/// Brute-force oracle: every pixel walks the globally sorted list of all
/// primitives in front of the camera; no tiling and no extent culling.
template <typename Scalar>
RenderOutput<Scalar> rasterize_reference(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                                         const Vec3<Scalar>& background, const RasterConfig& config = {});

template <typename Scalar>
struct CloudGradient {
  typename GaussianCloud<Scalar>::Matrix params;  // same layout as the cloud
  Vec3<Scalar> background = Vec3<Scalar>::Zero();
};

/// Exact gradients of Σ grad_rgb ⊙ rgb for the forward above. Clamped
/// opacities and skipped/stopped contributions get zero gradient.
template <typename Scalar>
CloudGradient<Scalar> rasterize_backward(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                                         const Vec3<Scalar>& background, const Tensor3<Scalar>& grad_rgb,
                                         const RasterConfig& config = {});

/// Tape op: renders a packed N×1×14 cloud; only the image is differentiable.
template <typename Scalar>
struct RenderVars {
  Var<Scalar> rgb;
  Tensor3<Scalar> alpha;
  Tensor3<Scalar> depth;
};

template <typename Scalar>
RenderVars<Scalar> render(Var<Scalar> packed_cloud, const Camera<Scalar>& camera,
                          const Vec3<Scalar>& background, const RasterConfig& config = {});

/// Random primitives around `center` (used by tests and the bench command).
template <typename Scalar>
GaussianCloud<Scalar> random_cloud(int n, Rng& rng, const Vec3<Scalar>& center, Scalar spread,
                                   Scalar scale_lo, Scalar scale_hi);

struct BenchStats {
  double mean_ms = 0, p95_ms = 0;
};

/// Times `frames` forward rasterizations after one warm-up frame.
BenchStats bench_rasterize(const GaussianCloud<float>& cloud, const Camera<float>& camera, int frames,
                           const RasterConfig& config = {});

}  // namespace pg
