#pragma once

#include "posegauss/tape.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace pg {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// Points closer than this (camera-space z) are not visible.
inline constexpr double kZNear = 1e-4;

template <typename Scalar>
struct Intrinsics {
  Scalar fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: empty sensor");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw std::invalid_argument("intrinsics: principal point outside the sensor");
  }

  /// Intrinsics of the same camera at 1/factor resolution (pixel-center
  /// convention: pixel i at the coarse scale is pixel factor·i at full scale).
  Intrinsics downscaled(int factor) const {
    Intrinsics k = *this;
    k.fx /= factor;
    k.fy /= factor;
    k.cx /= factor;
    k.cy /= factor;
    k.width = width / factor;
    k.height = height / factor;
    return k;
  }

  template <typename Other>
  Intrinsics<Other> cast() const {
    return {Other(fx), Other(fy), Other(cx), Other(cy), width, height};
  }
};

/// Square-pixel intrinsics from a vertical field of view, principal point at
/// the image center.
template <typename Scalar>
Intrinsics<Scalar> intrinsics_from_fov(int width, int height, Scalar vfov_degrees) {
  const Scalar f = Scalar(0.5) * height / std::tan(vfov_degrees * Scalar(M_PI / 360.0));
  return {f, f, Scalar(0.5) * width, Scalar(0.5) * height, width, height};
}

/// World→camera rigid transform: x_cam = R·x_world + t.
template <typename Scalar>
struct RigidPose {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  static RigidPose identity() { return {}; }

  void validate() const {
    const Scalar err = (rotation.transpose() * rotation - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff();
    if (!(err < Scalar(1e-9) || (sizeof(Scalar) < 8 && err < Scalar(1e-5))))
      throw std::invalid_argument("pose: rotation is not orthonormal");
    if (!(rotation.determinant() > 0)) throw std::invalid_argument("pose: rotation has det < 0");
  }

  Vec3<Scalar> to_camera(const Vec3<Scalar>& world) const { return rotation * world + translation; }
  Vec3<Scalar> to_world(const Vec3<Scalar>& cam) const {
    return rotation.transpose() * (cam - translation);
  }
  /// Camera center in world coordinates.
  Vec3<Scalar> center() const { return -rotation.transpose() * translation; }

  template <typename Other>
  RigidPose<Other> cast() const {
    return {rotation.template cast<Other>(), translation.template cast<Other>()};
  }
};

/// Camera looking from `eye` at `target`; OpenCV axes (x right, y down,
/// z forward) with `up` pointing towards −y in the image.
template <typename Scalar>
RigidPose<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target,
                          const Vec3<Scalar>& up) {
  const Vec3<Scalar> z = (target - eye).normalized();
  const Vec3<Scalar> x = z.cross(up).normalized();
  const Vec3<Scalar> y = z.cross(x);
  RigidPose<Scalar> pose;
  pose.rotation.row(0) = x.transpose();
  pose.rotation.row(1) = y.transpose();
  pose.rotation.row(2) = z.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

template <typename Scalar>
struct Camera {
  Intrinsics<Scalar> intrinsics;
  RigidPose<Scalar> pose;

  void validate() const {
    intrinsics.validate();
    pose.validate();
  }
  Camera downscaled(int factor) const { return {intrinsics.downscaled(factor), pose}; }

  template <typename Other>
  Camera<Other> cast() const {
    return {intrinsics.template cast<Other>(), pose.template cast<Other>()};
  }
};

template <typename Scalar>
struct Projection {
  Vec2<Scalar> pixel = Vec2<Scalar>::Zero();
  Scalar depth = 0;
  bool visible = false;
};

template <typename Scalar>
Projection<Scalar> project_camera_point(const Vec3<Scalar>& p, const Intrinsics<Scalar>& k) {
  Projection<Scalar> out;
  if (!(p.z() > Scalar(kZNear))) return out;
  out.pixel = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  out.depth = p.z();
  out.visible = true;
  return out;
}

/// Projects a world point. Points at or behind the near plane come back with
/// `visible == false` and zero pixel/depth.
template <typename Scalar>
Projection<Scalar> project(const Vec3<Scalar>& world, const Camera<Scalar>& cam) {
  return project_camera_point(cam.pose.to_camera(world), cam.intrinsics);
}

/// Camera-space ray through `pixel` with unit z component.
template <typename Scalar>
Vec3<Scalar> pixel_ray(const Vec2<Scalar>& pixel, const Intrinsics<Scalar>& k) {
  return {(pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, Scalar(1)};
}

/// Inverse of `project`: the world point at camera-space depth `depth`.
template <typename Scalar>
Vec3<Scalar> unproject(const Vec2<Scalar>& pixel, Scalar depth, const Camera<Scalar>& cam) {
  if (!(depth > 0)) throw std::invalid_argument("unproject: depth must be positive");
  return cam.pose.to_world(depth * pixel_ray(pixel, cam.intrinsics));
}

/// Sample positions for a bilinear gather: `coords` holds (x, y) per output
/// pixel in row-major order; positions with `valid == 0` produce zeros.
template <typename Scalar>
struct SampleGrid {
  int height = 0, width = 0;
  std::vector<Vec2<Scalar>> coords;
  Tensor3<Scalar> valid;  // height × width × 1, binary
};

/// Differentiable bilinear gather of `feat` at the grid positions with zero
/// padding. Only `feat` receives gradients.
template <typename Scalar>
Var<Scalar> sample_bilinear(Var<Scalar> feat, const SampleGrid<Scalar>& grid);

/// True when (x, y) lies in [0, W−1] × [0, H−1].
template <typename Scalar>
bool inside_image(Scalar x, Scalar y, int width, int height) {
  return x >= 0 && y >= 0 && x <= Scalar(width - 1) && y <= Scalar(height - 1);
}

/// Sample grid that maps every target pixel to the source-feature position
/// seen through `depth` (target resolution). `scale` is the ratio between the
/// depth map and the feature grid (depth size = feature size · scale);
/// cameras are given at depth-map resolution.
template <typename Scalar>
SampleGrid<Scalar> warp_grid(const Tensor3<Scalar>& depth, int feat_height, int feat_width,
                             const Camera<Scalar>& src_cam, const Camera<Scalar>& tgt_cam,
                             int scale = 1);

/// Warps source features into the target view. Returns the warped features
/// (target resolution) and the binary validity mask.
template <typename Scalar>
std::pair<Var<Scalar>, Tensor3<Scalar>> warp_features(Var<Scalar> feat, const Tensor3<Scalar>& depth,
                                                      const Camera<Scalar>& src_cam,
                                                      const Camera<Scalar>& tgt_cam, int scale = 1);

}  // namespace pg
