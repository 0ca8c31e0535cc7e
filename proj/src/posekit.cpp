#include "posegauss/posekit.hpp"

#include <algorithm>
#include <cmath>

namespace pg {

template <typename Scalar>
Joints2D<Scalar> project_joints(const JointSet<Scalar>& joints, const Camera<Scalar>& camera) {
  Joints2D<Scalar> out;
  for (int j = 0; j < joints.size(); ++j) {
    const bool vis = j < int(joints.visible.size()) ? bool(joints.visible[j]) : true;
    const auto p = project(joints.positions[j], camera);
    out.pixels.push_back(p.pixel);
    out.visible.push_back(vis && p.visible);
    out.depth.push_back(vis && p.visible ? p.depth : Scalar(0));
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> encode_heatmaps(const Joints2D<Scalar>& joints, Scalar sigma, int out_h, int out_w,
                                int factor) {
  if (!(sigma > 0)) throw std::invalid_argument("encode_heatmaps: sigma must be positive");
  if (factor < 1) throw std::invalid_argument("encode_heatmaps: factor must be >= 1");
  const int nj = joints.size();
  Tensor3<Scalar> out(out_h, out_w, nj);
  const Scalar inv = Scalar(1) / (2 * sigma * sigma);
  for (int j = 0; j < nj; ++j) {
    if (!joints.visible[j]) continue;
    const Scalar u = joints.pixels[j].x() / factor, v = joints.pixels[j].y() / factor;
    if (!(u >= Scalar(-0.5) && u < out_w - Scalar(0.5) && v >= Scalar(-0.5) && v < out_h - Scalar(0.5)))
      continue;
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const Scalar dx = x - u, dy = y - v;
        out(y, x, j) = std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  return out;
}

template <typename Scalar>
TPSState<Scalar>::TPSState(Scalar omega) : omega_(omega) {
  if (!(omega >= 0 && omega <= 1)) throw std::invalid_argument("TPS: omega must lie in [0, 1]");
}

template <typename Scalar>
Tensor3<Scalar> TPSState<Scalar>::step(const Tensor3<Scalar>& current) {
  if (previous_.empty()) {
    previous_ = current;
    return current;
  }
  require_same_shape(current, previous_, "tps_blend");
  Tensor3<Scalar> out = Tensor3<Scalar>::zeros_like(current);
  for (Eigen::Index i = 0; i < current.size(); ++i) {
    const Scalar c = current[i], p = previous_[i];
    // p + ω(c − p) keeps equal inputs fixed bit-exactly; the clamp pins the
    // result inside [min, max] despite rounding.
    Scalar s = omega_ == 1 ? c : p + omega_ * (c - p);
    s = std::clamp(s, std::min(c, p), std::max(c, p));
    out[i] = s;
  }
  previous_ = out;
  return out;
}

template struct JointSet<float>;
template struct JointSet<double>;
template Joints2D<float> project_joints(const JointSet<float>&, const Camera<float>&);
template Joints2D<double> project_joints(const JointSet<double>&, const Camera<double>&);
template Tensor3<float> encode_heatmaps(const Joints2D<float>&, float, int, int, int);
template Tensor3<double> encode_heatmaps(const Joints2D<double>&, double, int, int, int);
template class TPSState<float>;
template class TPSState<double>;

}  // namespace pg
