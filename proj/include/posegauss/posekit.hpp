#pragma once

#include "posegauss/geometry.hpp"

#include <string>
#include <vector>

namespace pg {

/// World-space joints of one skeleton instance.
template <typename Scalar>
struct JointSet {
  std::vector<Vec3<Scalar>> positions;
  std::vector<bool> visible;

  int size() const { return int(positions.size()); }
  static JointSet all_visible(std::vector<Vec3<Scalar>> positions) {
    JointSet j;
    j.visible.assign(positions.size(), true);
    j.positions = std::move(positions);
    return j;
  }
};

/// 2D joint observations in full-resolution pixels.
template <typename Scalar>
struct Joints2D {
  std::vector<Vec2<Scalar>> pixels;
  std::vector<bool> visible;
  std::vector<Scalar> depth;  // camera-space z, 0 when not visible

  int size() const { return int(pixels.size()); }
};

/// Projects every joint; joints behind the camera are marked invisible.
template <typename Scalar>
Joints2D<Scalar> project_joints(const JointSet<Scalar>& joints, const Camera<Scalar>& camera);

/// One Gaussian bump per joint channel on an out_h × out_w grid. `pixels`
/// are full-resolution positions; heatmap pixel i sits on full-resolution
/// pixel factor·i. Invisible joints and joints whose scaled position falls
/// outside [−0.5, W′−0.5) × [−0.5, H′−0.5) give all-zero channels.
template <typename Scalar>
Tensor3<Scalar> encode_heatmaps(const Joints2D<Scalar>& joints, Scalar sigma, int out_h, int out_w,
                                int factor);

template <typename Scalar>
Tensor3<Scalar> encode_heatmaps(const JointSet<Scalar>& joints, const Camera<Scalar>& camera,
                                Scalar sigma, int out_h, int out_w) {
  const int factor = camera.intrinsics.width / out_w;
  return encode_heatmaps(project_joints(joints, camera), sigma, out_h, out_w, factor);
}

/// Recurrent heatmap smoothing state for one (view, stream) pair.
template <typename Scalar>
class TPSState {
 public:
  explicit TPSState(Scalar omega);

  Scalar omega() const { return omega_; }
  bool empty() const { return previous_.empty(); }
  const Tensor3<Scalar>& previous() const { return previous_; }

  /// Blends `current` into the history and returns the smoothed heatmap.
  /// The first call after construction passes `current` through.
  Tensor3<Scalar> step(const Tensor3<Scalar>& current);

 private:
  Scalar omega_;
  Tensor3<Scalar> previous_;
};

template <typename Scalar>
TPSState<Scalar> tps_reset(Scalar omega) {
  return TPSState<Scalar>(omega);
}

/// Functional form: returns the smoothed heatmap and the advanced state.
template <typename Scalar>
std::pair<Tensor3<Scalar>, TPSState<Scalar>> tps_blend(const Tensor3<Scalar>& current,
                                                       TPSState<Scalar> state) {
  Tensor3<Scalar> out = state.step(current);
  return {std::move(out), std::move(state)};
}

}  // namespace pg
