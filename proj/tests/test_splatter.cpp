#include "doctest.h"
#include "support.hpp"

#include "posegauss/parallel.hpp"
#include "posegauss/splatter.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numeric>

using namespace pg;
namespace cl = cloud_layout;

namespace {

Camera<double> test_camera(int size = 64) {
  Camera<double> cam;
  cam.intrinsics = intrinsics_from_fov<double>(size, size, 50.0);
  cam.pose = look_at<double>({0.3, -0.2, -3.0}, {0, 0, 0}, {0, -1, 0});
  return cam;
}

GaussianCloud<double> scene(int n, std::uint64_t seed, double scale_hi = 0.25) {
  Rng rng(seed);
  return random_cloud<double>(n, rng, Vec3<double>::Zero(), 1.2, 0.02, scale_hi);
}

double max_abs_diff(const Tensor3<double>& a, const Tensor3<double>& b) {
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

// Scalar loss Σ w ⊙ rgb for fixed weights.
double weighted(const Tensor3<double>& rgb, const Tensor3<double>& w) { return rgb.data().dot(w.data()); }

struct FdResult {
  double worst = 0;
  int checked = 0, skipped = 0;
};

// Central differences on every cloud float. With `skip_jumps`, coordinates
// whose ε and ε/2 estimates disagree (a contribution crossed a threshold
// inside the stencil) are counted and skipped.
FdResult fd_check(GaussianCloud<double> cloud, const Camera<double>& cam, const Vec3<double>& bg,
                  const RasterConfig& config, std::uint64_t seed, bool skip_jumps) {
  Rng rng(seed);
  auto w = pgtest::random_tensor(cam.intrinsics.height, cam.intrinsics.width, 3, rng, 0.5, 1.5);
  const auto grad = rasterize_backward(cloud, cam, bg, w, config);
  const double gmax = grad.params.cwiseAbs().maxCoeff();
  auto f = [&] { return weighted(rasterize(cloud, cam, bg, config).rgb, w); };
  auto central = [&](double& x, double eps) {
    const double x0 = x;
    x = x0 + eps;
    const double fp = f();
    x = x0 - eps;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * eps);
  };
  FdResult r;
  const double eps = 1e-5;
  for (int i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < cl::kFloats; ++c) {
      double& x = cloud.params(i, c);
      const double num = central(x, eps);
      if (skip_jumps) {
        const double half = central(x, eps / 2);
        if (std::abs(num - half) > 1e-4 * std::max({1.0, std::abs(num), std::abs(half)})) {
          ++r.skipped;
          continue;
        }
      }
      const double a = grad.params(i, c);
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3 * gmax, 1e-8});
      r.worst = std::max(r.worst, err);
      ++r.checked;
    }
  return r;
}

}  // namespace

TEST_CASE("cov3d: identity quaternion gives diag(s^2)") {
  const Mat3<double> s = compute_cov3d<double>({1, 0, 0, 0}, {0.5, 2.0, 3.0});
  Mat3<double> expect = Mat3<double>::Zero();
  expect.diagonal() << 0.25, 4.0, 9.0;
  CHECK((s - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cov3d: spectrum is rotation invariant, symmetric, Cholesky-decomposable") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::Vector4d q;
    for (int c = 0; c < 4; ++c) q[c] = rng.normal();
    const Vec3<double> s(rng.uniform(0.01, 2), rng.uniform(0.01, 2), rng.uniform(0.01, 2));
    const Mat3<double> cov = compute_cov3d<double>(q, s);
    REQUIRE((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    REQUIRE(cov.llt().info() == Eigen::Success);
    Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Mat3<double>>(cov).eigenvalues();
    Eigen::Vector3d expect = s.cwiseProduct(s);
    std::sort(expect.data(), expect.data() + 3);
    REQUIRE((ev - expect).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expect.maxCoeff()));
  }
}

TEST_CASE("project_splat: on-axis isotropic primitive and culling") {
  Camera<double> cam;
  cam.intrinsics = {100, 100, 32, 32, 64, 64};
  GaussianCloud<double> c;
  c.params.setZero(2, cl::kFloats);
  c.params.row(0) << 0, 0, 2.0, 1, 0, 0, 0, 0.1, 0.1, 0.1, 0.5, 1, 1, 1;
  c.params.row(1) << 0, 0, -2.0, 1, 0, 0, 0, 0.1, 0.1, 0.1, 0.5, 1, 1, 1;
  RasterConfig cfg;
  auto s = project_splat(c, 0, cam, cfg);
  REQUIRE(s.has_value());
  const double expect = (100.0 / 2.0) * (100.0 / 2.0) * 0.01 + cfg.cov_floor;
  CHECK(s->cov[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(s->cov[2] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(s->cov[1]) < 1e-12);
  CHECK(s->mean.x() == 32.0);
  CHECK(s->depth == 2.0);
  CHECK_FALSE(project_splat(c, 1, cam, cfg).has_value());

  // Far outside the frame.
  c.params.row(1) << 50, 0, 2.0, 1, 0, 0, 0, 0.01, 0.01, 0.01, 0.5, 1, 1, 1;
  CHECK_FALSE(project_splat(c, 1, cam, cfg).has_value());
}

TEST_CASE("project_splat: covariance eigenvalues never below the floor") {
  const auto cam = test_camera();
  auto cloud = scene(500, 11, 0.3);
  RasterConfig cfg;
  int seen = 0;
  for (int i = 0; i < cloud.size(); ++i) {
    auto s = project_splat(cloud, i, cam, cfg);
    if (!s) continue;
    ++seen;
    Eigen::Matrix2d m;
    m << s->cov[0], s->cov[1], s->cov[1], s->cov[2];
    REQUIRE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues().minCoeff() >= cfg.cov_floor - 1e-12);
    REQUIRE(s->depth > 0);
  }
  CHECK(seen > 100);
}

TEST_CASE("empty cloud renders the background") {
  const auto cam = test_camera(20);
  GaussianCloud<double> empty;
  empty.params.resize(0, cl::kFloats);
  const Vec3<double> bg(0.2, 0.4, 0.6);
  for (auto out : {rasterize(empty, cam, bg), rasterize_reference(empty, cam, bg)}) {
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        CHECK(out.alpha(y, x, 0) == 0.0);
        for (int c = 0; c < 3; ++c) CHECK(out.rgb(y, x, c) == bg[c]);
      }
  }
}

TEST_CASE("single saturated splat gives alpha_max times its colour") {
  Camera<double> cam;
  cam.intrinsics = {60, 60, 16, 16, 32, 32};
  GaussianCloud<double> c;
  c.params.setZero(1, cl::kFloats);
  c.params.row(0) << 0, 0, 3.0, 1, 0, 0, 0, 5.0, 5.0, 0.01, 1.0, 1, 0, 0;
  for (auto out : {rasterize(c, cam, Vec3<double>(0, 0, 0)), rasterize_reference(c, cam, Vec3<double>(0, 0, 0))}) {
    CHECK(out.rgb(16, 16, 0) == doctest::Approx(0.99).epsilon(1e-15));
    CHECK(out.rgb(16, 16, 1) == 0.0);
    CHECK(out.rgb(16, 16, 2) == 0.0);
  }
}

TEST_CASE("tiled rasterizer equals the brute-force reference on 100 random clouds") {
  const auto cam = test_camera(64);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const int n = 1 + rng.index(256);
    auto cloud = random_cloud<double>(n, rng, Vec3<double>::Zero(), 1.5, 0.01, 0.3);
    // Some primitives behind the camera and some with saturated opacity.
    for (int i = 0; i < n; i += 17) cloud.params(i, cl::kMean + 2) = -4.0;
    for (int i = 3; i < n; i += 11) cloud.params(i, cl::kOpacity) = 1.0;
    const Vec3<double> bg(rng.uniform(), rng.uniform(), rng.uniform());
    RasterConfig cfg;
    cfg.tile = trial % 3 == 0 ? 8 : 16;
    auto a = rasterize(cloud, cam, bg, cfg);
    auto b = rasterize_reference(cloud, cam, bg, cfg);
    worst = std::max({worst, max_abs_diff(a.rgb, b.rgb), max_abs_diff(a.alpha, b.alpha)});
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("compositing conservation and alpha range") {
  const auto cam = test_camera(48);
  auto cloud = scene(200, 5);
  const Vec3<double> bg(1, 1, 1);
  auto out = rasterize(cloud, cam, bg);
  // A unit-colour render on black is Σ α_i·T_i, which must equal 1 − T_final.
  GaussianCloud<double> white = cloud;
  white.params.middleCols(cl::kRgb, 3).setOnes();
  auto w = rasterize(white, cam, Vec3<double>(0, 0, 0));
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      const double a = out.alpha(y, x, 0);
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      // Σ α_i T_i = 1 − T_final
      CHECK(std::abs(w.rgb(y, x, 0) - a) <= 1e-9);
    }
}

TEST_CASE("rendering is invariant to the order of primitives") {
  const auto cam = test_camera(48);
  auto cloud = scene(150, 8);
  std::vector<int> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(2);
  for (int i = cloud.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  GaussianCloud<double> shuffled;
  shuffled.params.resize(cloud.size(), cl::kFloats);
  for (int i = 0; i < cloud.size(); ++i) shuffled.params.row(i) = cloud.params.row(perm[i]);
  const Vec3<double> bg(0.1, 0.2, 0.3);
  auto a = rasterize(cloud, cam, bg), b = rasterize(shuffled, cam, bg);
  CHECK(max_abs_diff(a.rgb, b.rgb) == 0.0);
  CHECK(max_abs_diff(a.depth, b.depth) == 0.0);
}

TEST_CASE("raising the front splat's opacity never lowers its own contribution") {
  Camera<double> cam;
  cam.intrinsics = {40, 40, 8, 8, 16, 16};
  GaussianCloud<double> c;
  c.params.setZero(2, cl::kFloats);
  c.params.row(0) << 0, 0, 2.0, 1, 0, 0, 0, 0.2, 0.2, 0.2, 0.1, 1, 0, 0;
  c.params.row(1) << 0.05, 0, 3.0, 1, 0, 0, 0, 0.3, 0.3, 0.3, 0.7, 0, 1, 0;
  double prev = -1;
  for (double o = 0.1; o <= 1.0; o += 0.05) {
    c.params(0, cl::kOpacity) = o;
    const double red = rasterize(c, cam, Vec3<double>(0, 0, 0)).rgb(8, 8, 0);
    CHECK(red >= prev);
    prev = red;
  }
}

TEST_CASE("forward is identical across worker counts; backward is repeatable") {
  const auto cam = test_camera(64);
  auto cloud = scene(200, 21);
  const Vec3<double> bg(0.5, 0.5, 0.5);
  const int saved = num_threads();
  set_num_threads(1);
  auto a = rasterize(cloud, cam, bg);
  set_num_threads(4);
  auto b = rasterize(cloud, cam, bg);
  CHECK(max_abs_diff(a.rgb, b.rgb) == 0.0);
  Rng rng(4);
  auto w = pgtest::random_tensor(64, 64, 3, rng);
  auto g1 = rasterize_backward(cloud, cam, bg, w);
  auto g2 = rasterize_backward(cloud, cam, bg, w);
  CHECK((g1.params - g2.params).cwiseAbs().maxCoeff() == 0.0);
  set_num_threads(saved);
}

TEST_CASE("backward matches finite differences without thresholds") {
  // α floor and transmittance stop disabled, extents large: the forward is
  // smooth, so every coordinate is checked.
  RasterConfig cfg;
  cfg.alpha_min = 0;
  cfg.transmittance_min = 0;
  cfg.sigma_extent = 1e3;
  Camera<double> cam = test_camera(24);
  double worst = 0;
  for (int trial = 0; trial < 6; ++trial) {
    Rng rng(50 + trial);
    auto cloud = random_cloud<double>(4 + trial, rng, Vec3<double>::Zero(), 0.6, 0.1, 0.4);
    for (int i = 0; i < cloud.size(); ++i) cloud.params(i, cl::kOpacity) = rng.uniform(0.2, 0.8);
    // Unnormalised quaternions exercise the normalisation Jacobian.
    cloud.params.middleCols(cl::kQuat, 4) *= 1.7;
    const Vec3<double> bg(0.3, 0.1, 0.9);
    auto r = fd_check(cloud, cam, bg, cfg, trial, false);
    worst = std::max(worst, r.worst);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward matches finite differences with default thresholds") {
  Camera<double> cam = test_camera(32);
  int checked = 0, skipped = 0;
  double worst = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Rng rng(70 + trial);
    auto cloud = random_cloud<double>(6, rng, Vec3<double>::Zero(), 0.5, 0.1, 0.4);
    for (int i = 0; i < cloud.size(); ++i) cloud.params(i, cl::kOpacity) = rng.uniform(0.2, 0.9);
    auto r = fd_check(cloud, cam, Vec3<double>(0.2, 0.2, 0.2), RasterConfig{}, trial, true);
    worst = std::max(worst, r.worst);
    checked += r.checked;
    skipped += r.skipped;
  }
  CHECK(worst < 1e-4);
  CHECK(skipped * 20 < checked);
}

TEST_CASE("clamped opacity receives zero geometric gradient") {
  Camera<double> cam;
  cam.intrinsics = {40, 40, 8, 8, 16, 16};
  GaussianCloud<double> c;
  c.params.setZero(1, cl::kFloats);
  c.params.row(0) << 0, 0, 2.0, 1, 0, 0, 0, 5, 5, 5, 1.0, 1, 0, 0;
  Tensor3<double> up = Tensor3<double>::constant(16, 16, 3, 1.0);
  auto g = rasterize_backward(c, cam, Vec3<double>(0.5, 0.5, 0.5), up);
  CHECK(g.params(0, cl::kOpacity) == 0.0);
  for (int k = 0; k < 3; ++k) CHECK(g.params(0, cl::kMean + k) == 0.0);
  CHECK(g.params(0, cl::kRgb) == doctest::Approx(0.99 * 256).epsilon(1e-12));
}

TEST_CASE("fully occluded splat gets exactly zero gradient") {
  Camera<double> cam;
  cam.intrinsics = {40, 40, 8, 8, 16, 16};
  GaussianCloud<double> c;
  c.params.setZero(4, cl::kFloats);
  for (int i = 0; i < 3; ++i) c.params.row(i) << 0, 0, 1.0 + 0.1 * i, 1, 0, 0, 0, 10, 10, 0.01, 1.0, 1, 1, 1;
  c.params.row(3) << 0.01, 0.02, 3.0, 0.9, 0.1, 0.2, 0.1, 0.1, 0.2, 0.1, 0.6, 0.3, 0.2, 0.1;
  Rng rng(1);
  auto up = pgtest::random_tensor(16, 16, 3, rng);
  auto g = rasterize_backward(c, cam, Vec3<double>(0.1, 0.2, 0.3), up);
  for (int k = 0; k < cl::kFloats; ++k) CHECK(g.params(3, k) == 0.0);
}

TEST_CASE("uncovered pixel sends gradient only to the background") {
  Camera<double> cam;
  cam.intrinsics = {40, 40, 16, 16, 32, 32};
  GaussianCloud<double> c;
  c.params.setZero(1, cl::kFloats);
  c.params.row(0) << 0, 0, 2.0, 1, 0, 0, 0, 0.05, 0.05, 0.05, 0.8, 1, 0, 0;
  Tensor3<double> up(32, 32, 3);
  up(0, 0, 0) = 1.0, up(0, 0, 2) = -2.0;
  auto g = rasterize_backward(c, cam, Vec3<double>(0.3, 0.3, 0.3), up);
  CHECK(g.params.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.background[0] == 1.0);
  CHECK(g.background[1] == 0.0);
  CHECK(g.background[2] == -2.0);
}

TEST_CASE("render op backpropagates into the packed cloud") {
  const auto cam = test_camera(24);
  auto cloud = scene(5, 30, 0.4);
  Rng rng(9);
  auto w = pgtest::random_tensor(24, 24, 3, rng);
  const Vec3<double> bg(0.1, 0.1, 0.1);
  Tape<double> tape;
  Var<double> packed = tape.leaf(cloud.to_tensor());
  auto rv = render(packed, cam, bg);
  tape.backward(sum(mul(rv.rgb, tape.constant(w))));
  auto direct = rasterize_backward(cloud, cam, bg, w);
  const auto& g = tape.grad(packed);
  CHECK(g.height() == 5);
  double diff = 0;
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < cl::kFloats; ++k) diff = std::max(diff, std::abs(g(i, 0, k) - direct.params(i, k)));
  CHECK(diff == 0.0);
}
