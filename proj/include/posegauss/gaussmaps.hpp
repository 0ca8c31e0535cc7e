#pragma once

#include "posegauss/geometry.hpp"

#include <string>
#include <vector>

namespace pg {

/// Channel layout of the decoder's SR-Opacity head (pre-activation).
namespace raw_layout {
inline constexpr int kScale = 0;     // 3
inline constexpr int kRotation = 3;  // 3, axis-angle
inline constexpr int kOpacity = 6;   // 2: opacity, auxiliary foreground
inline constexpr int kChannels = 8;
}  // namespace raw_layout

/// Channel layout of an activated Gaussian map (decoder, prior, blend).
namespace map_layout {
inline constexpr int kScale = 0;    // 3, metres
inline constexpr int kQuat = 3;     // 4, (w, x, y, z) unit
inline constexpr int kOpacity = 7;  // 1
inline constexpr int kAux = 8;      // 1
inline constexpr int kChannels = 9;
}  // namespace map_layout

/// Per-primitive float layout of a packed cloud; also the PGCL record.
namespace cloud_layout {
inline constexpr int kMean = 0;     // 3
inline constexpr int kQuat = 3;     // 4
inline constexpr int kScale = 7;    // 3
inline constexpr int kOpacity = 10; // 1
inline constexpr int kRgb = 11;     // 3
inline constexpr int kFloats = 14;
}  // namespace cloud_layout

/// Explicit Gaussian primitives, one row per primitive (cloud_layout).
template <typename Scalar>
struct GaussianCloud {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, cloud_layout::kFloats, Eigen::RowMajor>;
  Matrix params;

  int size() const { return int(params.rows()); }
  Vec3<Scalar> mean(int i) const { return params.row(i).template segment<3>(cloud_layout::kMean); }
  Eigen::Matrix<Scalar, 4, 1> quat(int i) const {
    return params.row(i).template segment<4>(cloud_layout::kQuat);
  }
  Vec3<Scalar> scale(int i) const { return params.row(i).template segment<3>(cloud_layout::kScale); }
  Scalar opacity(int i) const { return params(i, cloud_layout::kOpacity); }
  Vec3<Scalar> rgb(int i) const { return params.row(i).template segment<3>(cloud_layout::kRgb); }

  /// Packed tape form: N × 1 × 14.
  Tensor3<Scalar> to_tensor() const;
  static GaussianCloud from_tensor(const Tensor3<Scalar>& packed);
};

/// Axis-angle → unit quaternion per pixel (3 → 4 channels). Angles above π
/// are clamped to π along the same axis.
template <typename Scalar>
Var<Scalar> axis_angle_to_quat(Var<Scalar> rotation);

/// Normalises the 4 channels starting at `begin`; other channels pass through.
template <typename Scalar>
Var<Scalar> normalize_quat_channels(Var<Scalar> a, int begin);

/// Softplus scales, exp-map rotation, sigmoid opacity/aux: 8 → 9 channels.
template <typename Scalar>
Var<Scalar> activate(Var<Scalar> raw);

/// Analytic prior: isotropic scale s0·depth/fx, identity rotation,
/// opacity = aux = mask. Throws when depth ≤ 0 under the mask.
template <typename Scalar>
Tensor3<Scalar> build_prior(const Tensor3<Scalar>& depth, const Tensor3<Scalar>& mask,
                            const Intrinsics<Scalar>& intrinsics, Scalar s0);

/// σ(c)·dec + (1 − σ(c))·prior per channel, then quaternion renormalisation.
template <typename Scalar>
Var<Scalar> confidence_blend(Var<Scalar> dec, Var<Scalar> prior, Var<Scalar> confidence);

/// One primitive per mask pixel in row-major order: mean from depth
/// unprojection, rgb from `image`, scale/quat from the map, opacity =
/// map opacity × aux. Result is a packed N × 1 × 14 cloud.
template <typename Scalar>
Var<Scalar> lift_to_gaussians(Var<Scalar> map, Var<Scalar> depth, const Tensor3<Scalar>& mask,
                              const Tensor3<Scalar>& image, const Camera<Scalar>& camera);

/// Concatenates packed clouds (in order).
template <typename Scalar>
Var<Scalar> merge_clouds(const std::vector<Var<Scalar>>& clouds);

/// PGCL debug export: "PGCL", u32 version, u64 count, 14 LE float32 per primitive.
inline constexpr std::uint32_t kCloudFormatVersion = 1;
template <typename Scalar>
void write_cloud(const std::string& path, const GaussianCloud<Scalar>& cloud);
GaussianCloud<float> read_cloud(const std::string& path);

}  // namespace pg
