#include "posegauss/splatter.hpp"

#include "posegauss/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pg {

void RasterConfig::validate() const {
  if (tile < 1) throw std::invalid_argument("raster: tile size must be >= 1");
  if (!(alpha_max > 0 && alpha_max < 1)) throw std::invalid_argument("raster: alpha_max must be in (0, 1)");
  if (!(transmittance_min >= 0 && transmittance_min < 1))
    throw std::invalid_argument("raster: transmittance_min must be in [0, 1)");
  if (!(alpha_min >= 0 && alpha_min < 1)) throw std::invalid_argument("raster: alpha_min must be in [0, 1)");
  if (!(cov_floor >= 0)) throw std::invalid_argument("raster: cov_floor must be >= 0");
  if (!(sigma_extent > 0)) throw std::invalid_argument("raster: sigma_extent must be positive");
}

template <typename Scalar>
Mat3<Scalar> quat_to_rotation(const Eigen::Matrix<Scalar, 4, 1>& q) {
  const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<Scalar> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

template <typename Scalar>
Mat3<Scalar> compute_cov3d(const Eigen::Matrix<Scalar, 4, 1>& quat, const Vec3<Scalar>& scale) {
  const Scalar n = quat.norm();
  if (!(n > 0)) throw std::invalid_argument("compute_cov3d: zero quaternion");
  const Mat3<Scalar> m = quat_to_rotation<Scalar>(quat / n) * scale.asDiagonal();
  return m * m.transpose();
}

namespace {

// Quantities shared by projection and its backward pass.
template <typename Scalar>
struct ProjectionTerms {
  Vec3<Scalar> t;                              // camera-space mean
  Eigen::Matrix<Scalar, 2, 3> jw;              // J·W
  Mat3<Scalar> cov3;
  Eigen::Matrix<Scalar, 2, 2> cov2;            // including the floor
};

template <typename Scalar>
ProjectionTerms<Scalar> projection_terms(const GaussianCloud<Scalar>& cloud, int i,
                                         const Camera<Scalar>& camera, Scalar floor) {
  ProjectionTerms<Scalar> p;
  const auto& k = camera.intrinsics;
  p.t = camera.pose.to_camera(cloud.mean(i));
  const Scalar iz = Scalar(1) / p.t.z();
  Eigen::Matrix<Scalar, 2, 3> j;
  j << k.fx * iz, 0, -k.fx * p.t.x() * iz * iz, 0, k.fy * iz, -k.fy * p.t.y() * iz * iz;
  p.jw = j * camera.pose.rotation;
  p.cov3 = compute_cov3d<Scalar>(cloud.quat(i), cloud.scale(i));
  p.cov2 = p.jw * p.cov3 * p.jw.transpose();
  p.cov2(0, 0) += floor;
  p.cov2(1, 1) += floor;
  return p;
}

// Shared per-pixel compositing: visits accepted contributions in order and
// returns the final transmittance.
template <typename Scalar, typename Visit>
Scalar composite_pixel(const Splat2D<Scalar>* const* splats, std::size_t count, Scalar px, Scalar py,
                       const RasterConfig& config, Visit&& visit) {
  const Scalar alpha_max = Scalar(config.alpha_max);
  const Scalar alpha_min = Scalar(config.alpha_min);
  const Scalar t_min = Scalar(config.transmittance_min);
  Scalar T = 1;
  for (std::size_t n = 0; n < count; ++n) {
    const Splat2D<Scalar>& s = *splats[n];
    const Scalar dx = px - s.mean.x(), dy = py - s.mean.y();
    const Scalar power =
        Scalar(-0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    if (power > 0) continue;
    const Scalar g = std::exp(power);
    const Scalar raw = s.opacity * g;
    const Scalar alpha = std::min(alpha_max, raw);
    if (alpha < alpha_min) continue;
    const Scalar next = T * (1 - alpha);
    if (next < t_min) break;
    visit(s, alpha, raw < alpha_max, g, dx, dy, T);
    T = next;
  }
  return T;
}

template <typename Scalar>
RenderOutput<Scalar> make_output(int h, int w) {
  return {Tensor3<Scalar>(h, w, 3), Tensor3<Scalar>(h, w, 1), Tensor3<Scalar>(h, w, 1)};
}

template <typename Scalar>
void write_pixel(RenderOutput<Scalar>& out, int y, int x, const Vec3<Scalar>& color, Scalar depth, Scalar T,
                 const Vec3<Scalar>& background) {
  for (int c = 0; c < 3; ++c) out.rgb(y, x, c) = color[c] + T * background[c];
  out.alpha(y, x, 0) = 1 - T;
  out.depth(y, x, 0) = depth;
}

template <typename Scalar>
bool splat_less(const Splat2D<Scalar>& a, const Splat2D<Scalar>& b) {
  return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

}  // namespace

template <typename Scalar>
std::optional<Splat2D<Scalar>> project_splat(const GaussianCloud<Scalar>& cloud, int index,
                                             const Camera<Scalar>& camera, const RasterConfig& config) {
  const Vec3<Scalar> t = camera.pose.to_camera(cloud.mean(index));
  if (!(t.z() > Scalar(kZNear))) return std::nullopt;
  const Scalar opacity = cloud.opacity(index);
  if (!(std::min(opacity, Scalar(config.alpha_max)) >= Scalar(config.alpha_min)) || !(opacity > 0))
    return std::nullopt;

  const ProjectionTerms<Scalar> p = projection_terms(cloud, index, camera, Scalar(config.cov_floor));
  const Scalar a = p.cov2(0, 0), b = p.cov2(0, 1), c = p.cov2(1, 1);
  const Scalar det = a * c - b * b;
  if (!(det > 0)) return std::nullopt;

  Splat2D<Scalar> s;
  const auto& k = camera.intrinsics;
  s.mean = {k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy};
  s.cov[0] = a, s.cov[1] = b, s.cov[2] = c;
  s.conic[0] = c / det, s.conic[1] = -b / det, s.conic[2] = a / det;
  s.depth = t.z();
  s.rgb = cloud.rgb(index);
  s.opacity = opacity;
  s.index = index;

  // Beyond Mahalanobis radius sqrt(2·ln(o/α_min)) every α is below α_min,
  // so this box holds every pixel the compositor can accept.
  Scalar radius = Scalar(config.sigma_extent);
  if (config.alpha_min > 0) {
    const Scalar r2 = 2 * std::log(std::min(opacity, Scalar(1)) / Scalar(config.alpha_min));
    radius = std::max(radius, std::sqrt(std::max(r2, Scalar(0))));
  }
  radius *= Scalar(1 + 1e-6);  // roundoff margin between the box and the conic test
  s.extent_x = radius * std::sqrt(a);
  s.extent_y = radius * std::sqrt(c);
  if (s.mean.x() + s.extent_x < 0 || s.mean.x() - s.extent_x > k.width - 1 || s.mean.y() + s.extent_y < 0 ||
      s.mean.y() - s.extent_y > k.height - 1)
    return std::nullopt;
  if (!std::isfinite(s.extent_x) || !std::isfinite(s.extent_y) || !s.mean.allFinite()) return std::nullopt;
  return s;
}

template <typename Scalar>
TileGrid<Scalar> bin_splats(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                            const RasterConfig& config) {
  config.validate();
  camera.validate();
  const int n = cloud.size();
  const int width = camera.intrinsics.width, height = camera.intrinsics.height;

  // Projection in parallel; each worker fills its own slots.
  std::vector<std::optional<Splat2D<Scalar>>> projected(n);
  parallel_for(n, [&](int i) { projected[i] = project_splat(cloud, i, camera, config); });

  TileGrid<Scalar> grid;
  grid.tile = config.tile;
  grid.tiles_x = (width + config.tile - 1) / config.tile;
  grid.tiles_y = (height + config.tile - 1) / config.tile;
  for (auto& p : projected)
    if (p) grid.splats.push_back(*p);
  std::sort(grid.splats.begin(), grid.splats.end(), splat_less<Scalar>);

  grid.lists.assign(std::size_t(grid.tiles_x) * grid.tiles_y, {});
  const int ts = config.tile;
  for (int s = 0; s < int(grid.splats.size()); ++s) {
    const Splat2D<Scalar>& sp = grid.splats[s];
    // Tile (tx, ty) holds pixel centres [tx·ts, tx·ts + ts − 1].
    const int x0 = std::max(0, int(std::ceil(sp.mean.x() - sp.extent_x)));
    const int x1 = std::min(width - 1, int(std::floor(sp.mean.x() + sp.extent_x)));
    const int y0 = std::max(0, int(std::ceil(sp.mean.y() - sp.extent_y)));
    const int y1 = std::min(height - 1, int(std::floor(sp.mean.y() + sp.extent_y)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / ts; ty <= y1 / ts; ++ty)
      for (int tx = x0 / ts; tx <= x1 / ts; ++tx) grid.lists[std::size_t(ty) * grid.tiles_x + tx].push_back(s);
  }
  return grid;
}

template <typename Scalar>
RenderOutput<Scalar> rasterize(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                               const Vec3<Scalar>& background, const RasterConfig& config) {
  const TileGrid<Scalar> grid = bin_splats(cloud, camera, config);
  const int width = camera.intrinsics.width, height = camera.intrinsics.height;
  RenderOutput<Scalar> out = make_output<Scalar>(height, width);
  const int ts = grid.tile;

  parallel_for(grid.tiles_x * grid.tiles_y, [&](int tile) {
    const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const auto& list = grid.lists[tile];
    std::vector<const Splat2D<Scalar>*> ptrs(list.size());
    for (std::size_t n = 0; n < list.size(); ++n) ptrs[n] = &grid.splats[list[n]];
    for (int y = ty * ts; y < std::min(height, ty * ts + ts); ++y)
      for (int x = tx * ts; x < std::min(width, tx * ts + ts); ++x) {
        Vec3<Scalar> color = Vec3<Scalar>::Zero();
        Scalar depth = 0;
        const Scalar T = composite_pixel<Scalar>(
            ptrs.data(), ptrs.size(), Scalar(x), Scalar(y), config,
            [&](const Splat2D<Scalar>& s, Scalar alpha, bool, Scalar, Scalar, Scalar, Scalar Ti) {
              color += s.rgb * (alpha * Ti);
              depth += s.depth * alpha * Ti;
            });
        write_pixel(out, y, x, color, depth, T, background);
      }
  });
  return out;
}

template <typename Scalar>
RenderOutput<Scalar> rasterize_reference(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                                         const Vec3<Scalar>& background, const RasterConfig& config) {
  config.validate();
  camera.validate();
  const int width = camera.intrinsics.width, height = camera.intrinsics.height;
  const auto& k = camera.intrinsics;

  // Every primitive in front of the camera; no extent or frame culling.
  std::vector<Splat2D<Scalar>> all;
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3<Scalar> t = camera.pose.to_camera(cloud.mean(i));
    if (!(t.z() > Scalar(kZNear))) continue;
    const ProjectionTerms<Scalar> p = projection_terms(cloud, i, camera, Scalar(config.cov_floor));
    const Eigen::Matrix<Scalar, 2, 2> inv = p.cov2.inverse();
    Splat2D<Scalar> s;
    s.mean = {k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy};
    s.conic[0] = inv(0, 0), s.conic[1] = inv(0, 1), s.conic[2] = inv(1, 1);
    s.depth = t.z();
    s.rgb = cloud.rgb(i);
    s.opacity = cloud.opacity(i);
    s.index = i;
    all.push_back(s);
  }
  std::sort(all.begin(), all.end(), splat_less<Scalar>);
  std::vector<const Splat2D<Scalar>*> ptrs(all.size());
  for (std::size_t n = 0; n < all.size(); ++n) ptrs[n] = &all[n];

  RenderOutput<Scalar> out = make_output<Scalar>(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      Vec3<Scalar> color = Vec3<Scalar>::Zero();
      Scalar depth = 0;
      const Scalar T = composite_pixel<Scalar>(
          ptrs.data(), ptrs.size(), Scalar(x), Scalar(y), config,
          [&](const Splat2D<Scalar>& s, Scalar alpha, bool, Scalar, Scalar, Scalar, Scalar Ti) {
            color += s.rgb * (alpha * Ti);
            depth += s.depth * alpha * Ti;
          });
      write_pixel(out, y, x, color, depth, T, background);
    }
  return out;
}

namespace {

// Per-splat gradient w.r.t. screen-space quantities.
namespace g2 {
inline constexpr int kMeanX = 0, kMeanY = 1, kConicA = 2, kConicB = 3, kConicC = 4, kOpacity = 5, kRgb = 6;
inline constexpr int kCount = 9;
}  // namespace g2

template <typename Scalar>
Mat3<Scalar> rotation_derivative(const Eigen::Matrix<Scalar, 4, 1>& q, int component) {
  const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<Scalar> d;
  switch (component) {
    case 0: d << 0, -z, y, z, 0, -x, -y, x, 0; break;
    case 1: d << 0, y, z, y, -2 * x, -w, z, w, -2 * x; break;
    case 2: d << -2 * y, x, w, x, 0, z, -w, z, -2 * y; break;
    default: d << -2 * z, -w, x, w, -2 * z, y, x, y, 0; break;
  }
  return Scalar(2) * d;
}

// Chains screen-space gradients of splat i back to its 3D parameters.
template <typename Scalar>
void chain_to_cloud(const GaussianCloud<Scalar>& cloud, int i, const Camera<Scalar>& camera,
                    const RasterConfig& config, const Scalar* g, Scalar* out) {
  using namespace cloud_layout;
  const auto& k = camera.intrinsics;
  const ProjectionTerms<Scalar> p = projection_terms(cloud, i, camera, Scalar(config.cov_floor));
  const Vec3<Scalar>& t = p.t;
  const Scalar iz = Scalar(1) / t.z();

  out[kOpacity] += g[g2::kOpacity];
  for (int c = 0; c < 3; ++c) out[kRgb + c] += g[g2::kRgb + c];

  // Conic Q = M⁻¹ → dL/dM = −Q·dL/dQ·Q, with the off-diagonal gradient split
  // symmetrically (Q's b entry appears twice in the quadratic form).
  const Eigen::Matrix<Scalar, 2, 2> q = p.cov2.inverse();
  Eigen::Matrix<Scalar, 2, 2> dq;
  dq << g[g2::kConicA], Scalar(0.5) * g[g2::kConicB], Scalar(0.5) * g[g2::kConicB], g[g2::kConicC];
  const Eigen::Matrix<Scalar, 2, 2> dm = -q * dq * q;

  // M = (J W) Σ (J W)ᵀ
  const Mat3<Scalar> dcov3 = p.jw.transpose() * dm * p.jw;
  const Mat3<Scalar> w_cov_wt = camera.pose.rotation * p.cov3 * camera.pose.rotation.transpose();
  const Eigen::Matrix<Scalar, 2, 3> j = p.jw * camera.pose.rotation.transpose();
  const Eigen::Matrix<Scalar, 2, 3> dj = Scalar(2) * dm * j * w_cov_wt;

  // Camera-space mean: projection and Jacobian entries.
  Vec3<Scalar> dt = Vec3<Scalar>::Zero();
  const Scalar gmx = g[g2::kMeanX], gmy = g[g2::kMeanY];
  dt.x() += gmx * k.fx * iz;
  dt.y() += gmy * k.fy * iz;
  dt.z() += -gmx * k.fx * t.x() * iz * iz - gmy * k.fy * t.y() * iz * iz;
  dt.z() += -dj(0, 0) * k.fx * iz * iz - dj(1, 1) * k.fy * iz * iz;
  dt.x() += -dj(0, 2) * k.fx * iz * iz;
  dt.y() += -dj(1, 2) * k.fy * iz * iz;
  dt.z() += dj(0, 2) * 2 * k.fx * t.x() * iz * iz * iz + dj(1, 2) * 2 * k.fy * t.y() * iz * iz * iz;
  const Vec3<Scalar> dmean = camera.pose.rotation.transpose() * dt;
  for (int c = 0; c < 3; ++c) out[kMean + c] += dmean[c];

  // Σ = (R S)(R S)ᵀ
  const Eigen::Matrix<Scalar, 4, 1> raw_q = cloud.quat(i);
  const Scalar qn = raw_q.norm();
  const Eigen::Matrix<Scalar, 4, 1> qhat = raw_q / qn;
  const Vec3<Scalar> s = cloud.scale(i);
  const Mat3<Scalar> r = quat_to_rotation<Scalar>(qhat);
  const Mat3<Scalar> m = r * s.asDiagonal();
  const Mat3<Scalar> dmm = Scalar(2) * dcov3 * m;
  for (int c = 0; c < 3; ++c) out[kScale + c] += dmm.col(c).dot(r.col(c));
  const Mat3<Scalar> dr = dmm * s.asDiagonal();
  Eigen::Matrix<Scalar, 4, 1> dqhat;
  for (int c = 0; c < 4; ++c) dqhat[c] = (rotation_derivative<Scalar>(qhat, c).cwiseProduct(dr)).sum();
  const Eigen::Matrix<Scalar, 4, 1> dquat = (dqhat - qhat * qhat.dot(dqhat)) / qn;
  for (int c = 0; c < 4; ++c) out[kQuat + c] += dquat[c];
}

}  // namespace

template <typename Scalar>
CloudGradient<Scalar> rasterize_backward(const GaussianCloud<Scalar>& cloud, const Camera<Scalar>& camera,
                                         const Vec3<Scalar>& background, const Tensor3<Scalar>& grad_rgb,
                                         const RasterConfig& config) {
  const int width = camera.intrinsics.width, height = camera.intrinsics.height;
  if (grad_rgb.height() != height || grad_rgb.width() != width || grad_rgb.channels() != 3)
    throw std::invalid_argument("rasterize_backward: upstream gradient must be " + std::to_string(height) +
                                "x" + std::to_string(width) + "x3, got " + grad_rgb.shape_string());
  const TileGrid<Scalar> grid = bin_splats(cloud, camera, config);
  const int ts = grid.tile;
  const int n_tiles = grid.tiles_x * grid.tiles_y;
  const int n_splats = int(grid.splats.size());

  // Screen-space gradients, one buffer per worker, reduced in worker order.
  const int workers = chunk_workers(n_tiles);
  using Buffer = Eigen::Matrix<Scalar, Eigen::Dynamic, g2::kCount, Eigen::RowMajor>;
  std::vector<Buffer> partial(workers, Buffer::Zero(n_splats, g2::kCount));
  std::vector<Vec3<Scalar>> partial_bg(workers, Vec3<Scalar>::Zero());

  struct Hit {
    int splat;
    Scalar alpha, g, dx, dy, T;
    bool unclamped;
  };

  parallel_chunks(n_tiles, [&](int begin, int end, int worker) {
    Buffer& buf = partial[worker];
    std::vector<Hit> hits;
    for (int tile = begin; tile < end; ++tile) {
      const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
      const auto& list = grid.lists[tile];
      std::vector<const Splat2D<Scalar>*> ptrs(list.size());
      for (std::size_t n = 0; n < list.size(); ++n) ptrs[n] = &grid.splats[list[n]];
      for (int y = ty * ts; y < std::min(height, ty * ts + ts); ++y)
        for (int x = tx * ts; x < std::min(width, tx * ts + ts); ++x) {
          const Vec3<Scalar> up(grad_rgb(y, x, 0), grad_rgb(y, x, 1), grad_rgb(y, x, 2));
          hits.clear();
          const Scalar T_final = composite_pixel<Scalar>(
              ptrs.data(), ptrs.size(), Scalar(x), Scalar(y), config,
              [&](const Splat2D<Scalar>& s, Scalar alpha, bool unclamped, Scalar g, Scalar dx, Scalar dy,
                  Scalar Ti) {
                hits.push_back({int(&s - grid.splats.data()), alpha, g, dx, dy, Ti, unclamped});
              });
          partial_bg[worker] += T_final * up;
          if (up.isZero()) continue;
          // Back to front; `behind` is the colour composited after splat i,
          // background included, in units of T_i·(1 − α_i).
          Vec3<Scalar> behind = T_final * background;
          for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            const Splat2D<Scalar>& s = grid.splats[it->splat];
            Scalar* row = buf.row(it->splat).data();
            const Scalar w = it->alpha * it->T;
            for (int c = 0; c < 3; ++c) row[g2::kRgb + c] += w * up[c];
            if (it->unclamped) {
              // dC/dα_i = T_i·rgb_i − behind_i/(1 − α_i)
              const Vec3<Scalar> dc_dalpha = it->T * s.rgb - behind / (1 - it->alpha);
              const Scalar dalpha = dc_dalpha.dot(up);
              row[g2::kOpacity] += dalpha * it->g;
              const Scalar dpower = dalpha * it->alpha;
              const Scalar dx = it->dx, dy = it->dy;
              row[g2::kConicA] += Scalar(-0.5) * dx * dx * dpower;
              row[g2::kConicB] += -dx * dy * dpower;
              row[g2::kConicC] += Scalar(-0.5) * dy * dy * dpower;
              row[g2::kMeanX] += (s.conic[0] * dx + s.conic[1] * dy) * dpower;
              row[g2::kMeanY] += (s.conic[1] * dx + s.conic[2] * dy) * dpower;
            }
            behind += s.rgb * w;
          }
        }
    }
  });

  Buffer total = Buffer::Zero(n_splats, g2::kCount);
  CloudGradient<Scalar> out;
  for (int w = 0; w < workers; ++w) {
    total += partial[w];
    out.background += partial_bg[w];
  }
  out.params = GaussianCloud<Scalar>::Matrix::Zero(cloud.size(), cloud_layout::kFloats);
  parallel_for(n_splats, [&](int s) {
    const int i = grid.splats[s].index;
    chain_to_cloud(cloud, i, camera, config, total.row(s).data(), out.params.row(i).data());
  });
  return out;
}

template <typename Scalar>
RenderVars<Scalar> render(Var<Scalar> packed_cloud, const Camera<Scalar>& camera,
                          const Vec3<Scalar>& background, const RasterConfig& config) {
  Tape<Scalar>& tape = *packed_cloud.tape;
  auto cloud = std::make_shared<GaussianCloud<Scalar>>(GaussianCloud<Scalar>::from_tensor(packed_cloud.value()));
  RenderOutput<Scalar> out = rasterize(*cloud, camera, background, config);
  RenderVars<Scalar> vars;
  vars.alpha = std::move(out.alpha);
  vars.depth = std::move(out.depth);
  const int src = packed_cloud.id;
  vars.rgb = tape.push(std::move(out.rgb), tape.requires_grad(packed_cloud),
                       [cloud, camera, background, config, src](Tape<Scalar>& t, int self) {
                         const CloudGradient<Scalar> g =
                             rasterize_backward(*cloud, camera, background, t.grad(self), config);
                         Tensor3<Scalar>& dst = t.grad(src);
                         Eigen::Map<typename GaussianCloud<Scalar>::Matrix>(dst.ptr(), cloud->size(),
                                                                            cloud_layout::kFloats) += g.params;
                       });
  return vars;
}

template <typename Scalar>
GaussianCloud<Scalar> random_cloud(int n, Rng& rng, const Vec3<Scalar>& center, Scalar spread, Scalar scale_lo,
                                   Scalar scale_hi) {
  GaussianCloud<Scalar> cloud;
  cloud.params.resize(n, cloud_layout::kFloats);
  for (int i = 0; i < n; ++i) {
    auto row = cloud.params.row(i);
    for (int c = 0; c < 3; ++c) row[cloud_layout::kMean + c] = center[c] + spread * Scalar(rng.uniform(-1, 1));
    Eigen::Matrix<Scalar, 4, 1> q;
    for (int c = 0; c < 4; ++c) q[c] = Scalar(rng.normal());
    row.template segment<4>(cloud_layout::kQuat) = q.normalized();
    for (int c = 0; c < 3; ++c) row[cloud_layout::kScale + c] = Scalar(rng.uniform(scale_lo, scale_hi));
    row[cloud_layout::kOpacity] = Scalar(rng.uniform(0.05, 1.0));
    for (int c = 0; c < 3; ++c) row[cloud_layout::kRgb + c] = Scalar(rng.uniform());
  }
  return cloud;
}

BenchStats bench_rasterize(const GaussianCloud<float>& cloud, const Camera<float>& camera, int frames,
                           const RasterConfig& config) {
  if (frames < 1) throw std::invalid_argument("bench: frames must be >= 1");
  const Vec3<float> bg = Vec3<float>::Zero();
  rasterize(cloud, camera, bg, config);  // warm-up
  std::vector<double> ms;
  for (int f = 0; f < frames; ++f) {
    const auto t0 = std::chrono::steady_clock::now();
    rasterize(cloud, camera, bg, config);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchStats stats;
  stats.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / frames;
  std::sort(ms.begin(), ms.end());
  stats.p95_ms = ms[std::min<std::size_t>(ms.size() - 1, std::size_t(std::ceil(0.95 * frames)) - 1)];
  return stats;
}

#define PG_INSTANTIATE_SPLATTER(S)                                                                       \
  template Mat3<S> quat_to_rotation(const Eigen::Matrix<S, 4, 1>&);                                      \
  template Mat3<S> compute_cov3d(const Eigen::Matrix<S, 4, 1>&, const Vec3<S>&);                         \
  template std::optional<Splat2D<S>> project_splat(const GaussianCloud<S>&, int, const Camera<S>&,       \
                                                   const RasterConfig&);                                 \
  template TileGrid<S> bin_splats(const GaussianCloud<S>&, const Camera<S>&, const RasterConfig&);       \
  template RenderOutput<S> rasterize(const GaussianCloud<S>&, const Camera<S>&, const Vec3<S>&,          \
                                     const RasterConfig&);                                               \
  template RenderOutput<S> rasterize_reference(const GaussianCloud<S>&, const Camera<S>&, const Vec3<S>&, \
                                               const RasterConfig&);                                     \
  template CloudGradient<S> rasterize_backward(const GaussianCloud<S>&, const Camera<S>&, const Vec3<S>&, \
                                               const Tensor3<S>&, const RasterConfig&);                  \
  template RenderVars<S> render(Var<S>, const Camera<S>&, const Vec3<S>&, const RasterConfig&);          \
  template GaussianCloud<S> random_cloud(int, Rng&, const Vec3<S>&, S, S, S);

PG_INSTANTIATE_SPLATTER(float)
PG_INSTANTIATE_SPLATTER(double)

}  // namespace pg
