#include "posegauss/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pg {
namespace {

struct Taps {
  Eigen::Index idx[4];
  double w[4];
};

// Bilinear taps with zero padding; out-of-range taps get index −1.
template <typename Scalar>
Taps bilinear_taps(Scalar x, Scalar y, int width, int height) {
  const Scalar fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const Scalar ax = x - fx, ay = y - fy;
  Taps t;
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {double((1 - ax) * (1 - ay)), double(ax * (1 - ay)), double((1 - ax) * ay),
                        double(ax * ay)};
  for (int i = 0; i < 4; ++i) {
    const bool in = xs[i] >= 0 && ys[i] >= 0 && xs[i] < width && ys[i] < height;
    t.idx[i] = in ? Eigen::Index(ys[i]) * width + xs[i] : -1;
    t.w[i] = ws[i];
  }
  return t;
}

// Rounding noise from the unproject/project round trip would otherwise turn
// exact integer positions (and the last row/column) into fractional ones.
template <typename Scalar>
Scalar snap(Scalar v) {
  const Scalar r = std::round(v);
  const Scalar tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), std::abs(v));
  return std::abs(v - r) <= tol ? r : v;
}

}  // namespace

template <typename Scalar>
Var<Scalar> sample_bilinear(Var<Scalar> feat, const SampleGrid<Scalar>& grid) {
  Tape<Scalar>& tape = *feat.tape;
  const Tensor3<Scalar>& f = feat.value();
  const int c = f.channels();
  const int fh = f.height(), fw = f.width();
  const Eigen::Index n = Eigen::Index(grid.height) * grid.width;
  if (Eigen::Index(grid.coords.size()) != n || grid.valid.size() != n)
    throw std::invalid_argument("sample_bilinear: grid size mismatch");

  std::vector<Taps> taps(n);
  Tensor3<Scalar> out(grid.height, grid.width, c);
  for (Eigen::Index p = 0; p < n; ++p) {
    if (grid.valid[p] == 0) {
      taps[p].idx[0] = taps[p].idx[1] = taps[p].idx[2] = taps[p].idx[3] = -1;
      continue;
    }
    taps[p] = bilinear_taps(grid.coords[p].x(), grid.coords[p].y(), fw, fh);
    for (int i = 0; i < 4; ++i) {
      if (taps[p].idx[i] < 0 || taps[p].w[i] == 0) continue;
      const Scalar w = Scalar(taps[p].w[i]);
      const Scalar* src = f.ptr() + taps[p].idx[i] * c;
      Scalar* dst = out.ptr() + p * c;
      for (int ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
    }
  }
  return tape.push(std::move(out), tape.requires_grad(feat),
                   [feat, taps = std::move(taps), c](Tape<Scalar>& t, int self) {
                     const Tensor3<Scalar>& g = t.grad(self);
                     Tensor3<Scalar>& gf = t.grad(feat);
                     for (std::size_t p = 0; p < taps.size(); ++p)
                       for (int i = 0; i < 4; ++i) {
                         if (taps[p].idx[i] < 0 || taps[p].w[i] == 0) continue;
                         const Scalar w = Scalar(taps[p].w[i]);
                         const Scalar* src = g.ptr() + p * c;
                         Scalar* dst = gf.ptr() + taps[p].idx[i] * c;
                         for (int ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
                       }
                   });
}

template <typename Scalar>
SampleGrid<Scalar> warp_grid(const Tensor3<Scalar>& depth, int feat_height, int feat_width,
                             const Camera<Scalar>& src_cam, const Camera<Scalar>& tgt_cam,
                             int scale) {
  if (scale < 1) throw std::invalid_argument("warp: scale must be >= 1");
  if (depth.channels() != 1 || depth.height() != feat_height * scale ||
      depth.width() != feat_width * scale)
    throw std::invalid_argument("warp: depth map " + depth.shape_string() +
                                " does not match features " + std::to_string(feat_height) + "x" +
                                std::to_string(feat_width) + " at scale " + std::to_string(scale));
  SampleGrid<Scalar> grid;
  grid.height = depth.height();
  grid.width = depth.width();
  grid.coords.assign(std::size_t(depth.size()), Vec2<Scalar>::Zero());
  grid.valid = Tensor3<Scalar>(grid.height, grid.width, 1);
  // Composite transform target camera → source camera.
  const Mat3<Scalar> r = src_cam.pose.rotation * tgt_cam.pose.rotation.transpose();
  const Vec3<Scalar> t = src_cam.pose.translation - r * tgt_cam.pose.translation;
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const Eigen::Index p = Eigen::Index(y) * grid.width + x;
      const Scalar d = depth[p];
      if (!(d > 0)) continue;
      const Vec3<Scalar> pc = d * pixel_ray(Vec2<Scalar>(x, y), tgt_cam.intrinsics);
      const auto proj = project_camera_point<Scalar>(r * pc + t, src_cam.intrinsics);
      if (!proj.visible) continue;
      const Scalar u = snap(proj.pixel.x() / scale), v = snap(proj.pixel.y() / scale);
      if (!inside_image(u, v, feat_width, feat_height)) continue;
      grid.coords[p] = {u, v};
      grid.valid[p] = 1;
    }
  return grid;
}

template <typename Scalar>
std::pair<Var<Scalar>, Tensor3<Scalar>> warp_features(Var<Scalar> feat, const Tensor3<Scalar>& depth,
                                                      const Camera<Scalar>& src_cam,
                                                      const Camera<Scalar>& tgt_cam, int scale) {
  auto grid = warp_grid(depth, feat.height(), feat.width(), src_cam, tgt_cam, scale);
  Var<Scalar> warped = sample_bilinear(feat, grid);
  return {warped, std::move(grid.valid)};
}

#define PG_INSTANTIATE_GEOMETRY(S)                                                              \
  template Var<S> sample_bilinear(Var<S>, const SampleGrid<S>&);                                \
  template SampleGrid<S> warp_grid(const Tensor3<S>&, int, int, const Camera<S>&,               \
                                   const Camera<S>&, int);                                      \
  template std::pair<Var<S>, Tensor3<S>> warp_features(Var<S>, const Tensor3<S>&,               \
                                                       const Camera<S>&, const Camera<S>&, int);

PG_INSTANTIATE_GEOMETRY(float)
PG_INSTANTIATE_GEOMETRY(double)

}  // namespace pg
