#include "doctest.h"
#include "support.hpp"

#include "posegauss/log.hpp"
#include "posegauss/objectives.hpp"

#include <cmath>

using namespace pg;
using pgtest::random_tensor;

namespace {

// Direct per-window SSIM with 2-D weights, luma computed per pixel.
double ssim_oracle(const Tensor3<double>& a, const Tensor3<double>& b) {
  auto luma = [](const Tensor3<double>& t, int y, int x) {
    return t.channels() == 1 ? t(y, x, 0) : 0.299 * t(y, x, 0) + 0.587 * t(y, x, 1) + 0.114 * t(y, x, 2);
  };
  double w[11], total = 0;
  for (int i = 0; i < 11; ++i) total += (w[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= a.height(); ++y0)
    for (int x0 = 0; x0 + 11 <= a.width(); ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
          const double k = w[u] * w[v] / (total * total);
          const double pa = luma(a, y0 + u, x0 + v), pb = luma(b, y0 + u, x0 + v);
          ma += k * pa, mb += k * pb;
          saa += k * pa * pa, sbb += k * pb * pb, sab += k * pa * pb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
      sum += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

}  // namespace

TEST_CASE("render loss: zero for identical images, MAE endpoint") {
  Rng rng(1);
  auto img = random_tensor(16, 16, 3, rng, 0, 1);
  Tape<double> tape;
  CHECK(render_loss(tape.constant(img), img, 0.5, 0.5).value()[0] == 0.0);
  auto zeros = Tensor3<double>(16, 16, 3);
  auto ones = Tensor3<double>::constant(16, 16, 3, 1.0);
  CHECK(render_loss(tape.constant(zeros), ones, 1.0, 0.0).value()[0] == 1.0);
  CHECK_THROWS_AS(render_loss(tape.constant(zeros), Tensor3<double>(16, 15, 3), 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("render loss gradient matches finite differences") {
  Rng rng(2);
  auto gt = random_tensor(14, 15, 3, rng, 0, 1);
  auto pred = random_tensor(14, 15, 3, rng, 0, 1);
  auto r = pgtest::check_input(pred, [&](Tape<double>&, Var<double> x) { return render_loss(x, gt, 0.5, 0.5); },
                               1e-6);
  CHECK(r.finite);
  CHECK(r.max_rel_error < 1e-5);
  // SSIM term alone, 1-channel. Corner pixels see only the window tails
  // (gradients ~1e-7), so a larger step keeps roundoff below their size.
  auto g1 = random_tensor(12, 13, 1, rng, 0, 1);
  auto p1 = random_tensor(12, 13, 1, rng, 0, 1);
  auto r1 = pgtest::check_input(p1, [&](Tape<double>&, Var<double> x) { return ssim_var(x, g1); }, 1e-4);
  CHECK(r1.max_rel_error < 1e-5);
}

TEST_CASE("ssim: identity, closed form for constants, oracle, symmetry") {
  Rng rng(3);
  auto a = random_tensor(20, 23, 3, rng, 0, 1);
  auto b = random_tensor(20, 23, 3, rng, 0, 1);
  CHECK(ssim(a, a) == 1.0);

  auto ca = Tensor3<double>::constant(16, 16, 1, 0.5);
  auto cb = Tensor3<double>::constant(16, 16, 1, 0.6);
  const double c1 = 1e-4;
  const double closed = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
  CHECK(std::abs(ssim(ca, cb) - closed) < 1e-12);

  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-10);
  // Correlated pair so the value is far from zero.
  auto c = a;
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = 0.7 * a[i] + 0.3 * b[i];
  CHECK(std::abs(ssim(a, c) - ssim_oracle(a, c)) <= 1e-10);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
  const double s = ssim(a, b);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  CHECK_THROWS_AS(ssim(Tensor3<double>(10, 20, 3), Tensor3<double>(10, 20, 3)), std::invalid_argument);
}

TEST_CASE("depth loss: stage weighting and masking") {
  set_log_quiet(true);
  Tape<double> tape;
  Tensor3<double> gt = Tensor3<double>::constant(4, 4, 1, 2.0);
  Tensor3<double> mask(4, 4, 1);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) mask(y, x, 0) = 1.0;
  auto d1 = Tensor3<double>::constant(4, 4, 1, 2.5);  // e1 = 0.5
  auto d2 = Tensor3<double>::constant(4, 4, 1, 1.75); // e2 = 0.25
  for (int x = 0; x < 4; ++x) d2(3, x, 0) = 100.0;    // outside the mask
  auto v1 = tape.constant(d1), v2 = tape.constant(d2);
  CHECK(depth_loss<double>({v1}, gt, mask, 0.9).value()[0] == 0.5);
  CHECK(depth_loss<double>({v1, v2}, gt, mask, 0.9).value()[0] == doctest::Approx(0.9 * 0.5 + 0.25).epsilon(1e-15));
  CHECK(depth_loss<double>({tape.constant(gt), tape.constant(gt)}, gt, mask, 0.9).value()[0] == 0.0);
  CHECK(depth_loss<double>({v1}, gt, Tensor3<double>(4, 4, 1), 0.9).value()[0] == 0.0);
  set_log_quiet(false);
}

TEST_CASE("depth loss gradient matches finite differences") {
  Rng rng(4);
  auto gt = random_tensor(6, 7, 1, rng, 1, 3);
  auto mask = random_tensor(6, 7, 1, rng, 0, 1);
  auto d = random_tensor(6, 7, 1, rng, 1, 3);
  auto r = pgtest::check_input(d, [&](Tape<double>&, Var<double> x) {
    return depth_loss<double>({x, affine(x, 1.1, 0.05), mul(x, x)}, gt, mask, 0.8);
  }, 1e-6);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("pose fusion loss: formula, zero weight, detached target") {
  Rng rng(5);
  Tape<double> tape;
  auto a = random_tensor(4, 4, 5, rng);
  auto shifted = a;
  shifted.data().array() += 0.3;
  auto fj = tape.leaf(shifted), fp = tape.leaf(a);
  CHECK(pose_fusion_loss(fj, fp, 2.0).value()[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(pose_fusion_loss(fj, fp, 0.0).value()[0] == 0.0);
  CHECK(pose_fusion_loss(fp, fp, 1.0).value()[0] == 0.0);
  tape.backward(pose_fusion_loss(fj, fp, 1.0));
  CHECK_FALSE(tape.has_grad(fp));
  CHECK(tape.grad(fj)[0] == doctest::Approx(1.0 / 80).epsilon(1e-14));

  auto target = random_tensor(3, 3, 4, rng);
  auto x = random_tensor(3, 3, 4, rng);
  auto r = pgtest::check_input(x, [&](Tape<double>& t, Var<double> v) {
    return pose_fusion_loss(v, t.constant(target), 0.7);
  }, 1e-6);
  CHECK(r.max_rel_error < 1e-5);
  CHECK_THROWS_AS(pose_fusion_loss(tape.constant(x), tape.constant(Tensor3<double>(3, 3, 5)), 1.0),
                  std::invalid_argument);
}

TEST_CASE("total loss is the exact sum") {
  CHECK(total_loss(0, 0, 0).total == 0.0);
  CHECK(total_loss(1.0, 0.5, 0.25).total == 1.75);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    const auto r = total_loss(a, b, c);
    CHECK(r.total == r.render + r.depth + r.pose_fusion);
  }
}

TEST_CASE("psnr: arithmetic, cap, oracle, monotone in noise") {
  auto a = Tensor3<double>::constant(8, 8, 3, 0.5);
  auto b = Tensor3<double>::constant(8, 8, 3, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, a) == kPsnrCap);
  Rng rng(7);
  auto x = random_tensor(9, 11, 3, rng, 0, 1), y = random_tensor(9, 11, 3, rng, 0, 1);
  double mse = 0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 11; ++j)
      for (int c = 0; c < 3; ++c) mse += (x(i, j, c) - y(i, j, c)) * (x(i, j, c) - y(i, j, c));
  mse /= 9 * 11 * 3;
  CHECK(std::abs(psnr(x, y) - 10 * std::log10(1 / mse)) <= 1e-10);

  auto noise = random_tensor(9, 11, 3, rng);
  double prev = kPsnrCap + 1;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    auto n = x;
    n.data() += amp * noise.data();
    const double p = psnr(x, n);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("delta ssim statistics") {
  auto r = delta_stats({0.9, 0.8, 0.9});
  CHECK(r.mean == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(std::abs(r.stddev) < 1e-12);
  Rng rng(8);
  auto gt = random_tensor(16, 16, 3, rng, 0, 1);
  auto pred = random_tensor(16, 16, 3, rng, 0, 1);
  std::vector<Tensor3<double>> g(4, gt), p(4, pred);
  for (bool mode : {false, true}) {
    auto s = delta_ssim_stats(p, g, mode);
    CHECK(s.mean == 0.0);
    CHECK(s.stddev == 0.0);
  }
  CHECK_THROWS_AS(delta_ssim_stats(std::vector<Tensor3<double>>{gt}, std::vector<Tensor3<double>>{gt}),
                  std::invalid_argument);
  CHECK(delta_stats({0.5, 0.7, 0.4, 0.4}).stddev == doctest::Approx(std::sqrt((0.2 * 0.2 + 0.3 * 0.3 + 0.0) / 3 -
                                                                             (0.5 / 3) * (0.5 / 3))).epsilon(1e-12));
}

TEST_CASE("epe and 1px accuracy in disparity units") {
  Tensor3<double> gt = Tensor3<double>::constant(3, 3, 1, 2.0);
  Tensor3<double> mask = Tensor3<double>::constant(3, 3, 1, 1.0);
  auto exact = epe_1px(gt, gt, mask, 100.0);
  CHECK(exact.epe == 0.0);
  CHECK(exact.pct_1px == 100.0);
  // s/gt = 50 px; prediction at 52 px disparity is 2 units off everywhere.
  Tensor3<double> pred = Tensor3<double>::constant(3, 3, 1, 100.0 / 52.0);
  auto off = epe_1px(pred, gt, mask, 100.0);
  CHECK(off.epe == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(off.pct_1px == 0.0);
  CHECK_THROWS_AS(epe_1px(pred, gt, Tensor3<double>(3, 3, 1), 100.0), std::invalid_argument);
}
