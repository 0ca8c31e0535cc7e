#pragma once

#include "posegauss/geometry.hpp"
#include "posegauss/layers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pg {

enum class FusionStrategy { Concat, Add, Mul, WeightedAverage, FeatureAttention, Gated, OuterProduct };

const std::vector<FusionStrategy>& all_fusion_strategies();
std::string to_string(FusionStrategy s);
/// Parses the config spelling ("concat", "add", "mul", "weighted_average",
/// "feature_attention", "gated", "outer_product").
FusionStrategy parse_fusion_strategy(const std::string& name);

/// Learned parameters of a fusion strategy. `projection` maps pose features
/// (J channels) to image width for every strategy except Concat.
template <typename Scalar>
struct FusionParams {
  FusionStrategy strategy = FusionStrategy::Concat;
  int image_channels = 0, pose_channels = 0;
  std::optional<ConvParams<Scalar>> projection;
  std::optional<ConvParams<Scalar>> gate;      // Gated (per pixel) / FeatureAttention (per channel)
  ParamBuffer<Scalar>* mix_logit = nullptr;    // WeightedAverage
  std::optional<ConvParams<Scalar>> outer_a, outer_b, outer_out;  // OuterProduct
  int outer_rank = 0;

  int out_channels() const {
    return strategy == FusionStrategy::Concat ? image_channels + pose_channels : image_channels;
  }
};

template <typename Scalar>
FusionParams<Scalar> make_fusion(ParamStore<Scalar>& store, const std::string& name,
                                 FusionStrategy strategy, int image_channels, int pose_channels,
                                 std::uint64_t seed, int outer_rank = 4);

/// Fuses image and pose features of equal spatial size.
template <typename Scalar>
Var<Scalar> fuse(Var<Scalar> image, Var<Scalar> pose, const FusionParams<Scalar>& params);

/// Per-pixel outer product a ⊗ b flattened to Ca·Cb channels (a-major).
template <typename Scalar>
Var<Scalar> outer_channels(Var<Scalar> a, Var<Scalar> b);

/// All-pairs row correlation: C(i, j, k) = Σ_s Σ_h t(i, j, h)·s(i, k, h) / √D.
/// The result is stored as an H × W × W tensor (channel = k).
template <typename Scalar>
Var<Scalar> correlation_volume(Var<Scalar> target, const std::vector<Var<Scalar>>& sources);

/// Maps a depth hypothesis at reference pixel (i, j) to the column k* of the
/// plane-prewarped source features. The source features were warped to the
/// reference view through the plane z = plane_depth; `source_center` is the
/// source camera center in reference camera coordinates.
template <typename Scalar>
struct LookupGeometry {
  Intrinsics<Scalar> intrinsics;  // reference camera at feature resolution
  Scalar plane_depth = 1;
  Vec3<Scalar> source_center = Vec3<Scalar>::Zero();

  static LookupGeometry from_cameras(const Camera<Scalar>& reference, const Camera<Scalar>& source,
                                     Scalar plane_depth) {
    return {reference.intrinsics, plane_depth, reference.pose.to_camera(source.pose.center())};
  }

  /// k* and dk*/dD; returns false where the mapping is undefined (source
  /// ray parallel to the plane or the intersection behind the source).
  bool column(int i, int j, Scalar depth, Scalar& k, Scalar& dk_dd) const;
};

/// Gathers 2r+1 linear samples of C(i, j, ·) centred on k*(D(i, j)).
/// Samples outside [0, W−1] read as zero. Differentiable in both the volume
/// and the depth map.
template <typename Scalar>
Var<Scalar> lookup_correlation(Var<Scalar> volume, Var<Scalar> depth,
                               const LookupGeometry<Scalar>& geometry, int radius);

}  // namespace pg
