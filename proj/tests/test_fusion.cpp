#include "doctest.h"
#include "support.hpp"

#include "posegauss/fusion.hpp"

#include <cmath>

using namespace pg;
using pgtest::random_tensor;

namespace {

// Direct triple loop over Eq. 2 with the 1/√D normalisation.
Tensor3<double> naive_volume(const Tensor3<double>& t, const std::vector<Tensor3<double>>& srcs) {
  const int h = t.height(), w = t.width(), d = t.channels();
  Tensor3<double> c(h, w, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < w; ++k) {
        double acc = 0;
        for (const auto& s : srcs)
          for (int hh = 0; hh < d; ++hh) acc += t(i, j, hh) * s(i, k, hh);
        c(i, j, k) = acc / std::sqrt(double(d));
      }
  return c;
}

Var<double> volume_of(Tape<double>& tape, const Tensor3<double>& t, const std::vector<Tensor3<double>>& srcs) {
  std::vector<Var<double>> vs;
  for (const auto& s : srcs) vs.push_back(tape.constant(s));
  return correlation_volume(tape.constant(t), vs);
}

// Geometry where k* = j + shift(D) exactly: rectified pair with baseline b.
LookupGeometry<double> rectified(int w, double baseline, double plane) {
  LookupGeometry<double> g;
  g.intrinsics = {10, 10, w / 2.0, 2, w, 4};
  g.plane_depth = plane;
  g.source_center = Vec3<double>(baseline, 0, 0);
  return g;
}

}  // namespace

TEST_CASE("concat keeps both inputs in order and slicing recovers them") {
  ParamStore<double> store;
  auto fp = make_fusion(store, "f", FusionStrategy::Concat, 3, 2, 1);
  CHECK(store.count() == 0);
  Rng rng(1);
  auto a = random_tensor(4, 5, 3, rng), b = random_tensor(4, 5, 2, rng);
  Tape<double> tape;
  auto y = fuse(tape.constant(a), tape.constant(b), fp);
  CHECK(y.channels() == 5);
  CHECK(fp.out_channels() == 5);
  CHECK(slice_channels(y, 0, 3).value().data() == a.data());
  CHECK(slice_channels(y, 3, 2).value().data() == b.data());
}

TEST_CASE("add with a zero pose projection returns the image features") {
  ParamStore<double> store;
  auto fp = make_fusion(store, "f", FusionStrategy::Add, 4, 3, 2);
  fp.projection->weight->value.setZero();
  Rng rng(2);
  auto a = random_tensor(3, 3, 4, rng), b = random_tensor(3, 3, 3, rng);
  Tape<double> tape;
  CHECK(fuse(tape.constant(a), tape.constant(b), fp).value().data() == a.data());
}

TEST_CASE("gated fusion with zero gate weights averages the streams") {
  ParamStore<double> store;
  auto fp = make_fusion(store, "f", FusionStrategy::Gated, 3, 3, 3);
  fp.gate->weight->value.setZero();
  fp.projection->weight->value.setZero();
  for (int c = 0; c < 3; ++c) fp.projection->weight->value[c * 3 + c] = 1.0;  // identity 1×1
  Rng rng(3);
  auto a = random_tensor(3, 4, 3, rng), b = random_tensor(3, 4, 3, rng);
  Tape<double> tape;
  auto y = fuse(tape.constant(a), tape.constant(b), fp);
  CHECK((y.value().data() - 0.5 * (a.data() + b.data())).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("non-concat strategies keep the image width; weighted average stays convex") {
  Rng rng(4);
  auto a = random_tensor(4, 4, 4, rng), b = random_tensor(4, 4, 2, rng);
  for (FusionStrategy s : all_fusion_strategies()) {
    ParamStore<double> store;
    auto fp = make_fusion(store, "f", s, 4, 2, 5);
    Tape<double> tape;
    auto y = fuse(tape.constant(a), tape.constant(b), fp);
    CHECK(y.channels() == fp.out_channels());
    CHECK(y.value().all_finite());
    CHECK(parse_fusion_strategy(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_fusion_strategy("sum"), std::invalid_argument);
  ParamStore<double> store;
  auto fp = make_fusion(store, "f", FusionStrategy::WeightedAverage, 4, 2, 5);
  fp.mix_logit->value[0] = 0.7;
  Tape<double> tape;
  auto y = fuse(tape.constant(a), tape.constant(b), fp).value();
  auto p = conv2d(tape.constant(b), *fp.projection, 1, 0).value();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    CHECK(y[i] >= std::min(a[i], p[i]) - 1e-15);
    CHECK(y[i] <= std::max(a[i], p[i]) + 1e-15);
  }
}

TEST_CASE("fuse rejects spatial mismatch") {
  ParamStore<double> store;
  auto fp = make_fusion(store, "f", FusionStrategy::Concat, 2, 2, 1);
  Tape<double> tape;
  CHECK_THROWS_AS(fuse(tape.constant(Tensor3<double>(4, 4, 2)), tape.constant(Tensor3<double>(4, 3, 2)), fp),
                  std::invalid_argument);
}

TEST_CASE("every fusion strategy passes a gradient check") {
  Rng rng(6);
  auto a = random_tensor(4, 3, 4, rng), b = random_tensor(4, 3, 3, rng);
  for (FusionStrategy s : all_fusion_strategies()) {
    ParamStore<double> store;
    auto fp = make_fusion(store, "f", s, 4, 3, 7);
    if (fp.mix_logit) fp.mix_logit->value[0] = 0.3;
    auto build = [&](Tape<double>& t, Var<double> av) {
      return pgtest::projection_loss(fuse(av, t.constant(b), fp));
    };
    INFO(to_string(s));
    CHECK(pgtest::check_input(a, build, 1e-5).passed(1e-6));
    if (store.count() > 0)
      CHECK(pgtest::check_store(store, [&](Tape<double>& t) { return build(t, t.constant(a)); }, 1e-5)
                .passed(1e-6));
  }
}

TEST_CASE("correlation volume hand expansion") {
  Tensor3<double> t(1, 2, 1), s(1, 2, 1);
  t[0] = 2;
  t[1] = -3;
  s[0] = 5;
  s[1] = 7;
  Tape<double> tape;
  auto c = volume_of(tape, t, {s}).value();
  CHECK(c.shape_string() == "1x2x2");
  CHECK(c(0, 0, 0) == 10.0);
  CHECK(c(0, 0, 1) == 14.0);
  CHECK(c(0, 1, 0) == -15.0);
  CHECK(c(0, 1, 1) == -21.0);
}

TEST_CASE("correlation volume matches the naive triple loop") {
  Rng rng(7);
  double worst = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const int h = 1 + int(rng.index(16)), w = 1 + int(rng.index(16)), d = 1 + int(rng.index(32));
    const int ns = 1 + trial % 3;
    auto t = random_tensor(h, w, d, rng);
    std::vector<Tensor3<double>> srcs;
    for (int s = 0; s < ns; ++s) srcs.push_back(random_tensor(h, w, d, rng));
    Tape<double> tape;
    worst = std::max(worst, (volume_of(tape, t, srcs).value().data() - naive_volume(t, srcs).data()).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("correlation volume properties") {
  Rng rng(8);
  auto t = random_tensor(6, 7, 5, rng), s1 = random_tensor(6, 7, 5, rng), s2 = random_tensor(6, 7, 5, rng);
  Tape<double> tape;
  // Symmetric when target equals the single source.
  auto sym = volume_of(tape, t, {t}).value();
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 7; ++j)
      for (int k = 0; k < 7; ++k) CHECK(sym(i, j, k) == doctest::Approx(sym(i, k, j)).epsilon(1e-14));
  // Bilinear in the target.
  Tensor3<double> t2 = t;
  t2.data() *= 2.5;
  CHECK((volume_of(tape, t2, {s1, s2}).value().data() - 2.5 * volume_of(tape, t, {s1, s2}).value().data())
            .cwiseAbs().maxCoeff() < 1e-12);
  // Source order does not matter.
  CHECK((volume_of(tape, t, {s1, s2}).value().data() - volume_of(tape, t, {s2, s1}).value().data())
            .cwiseAbs().maxCoeff() < 1e-13);
  // Normalised self-correlation peaks on the diagonal.
  Tensor3<double> n = random_tensor(5, 9, 16, rng);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 9; ++j) {
      double norm = 0;
      for (int c = 0; c < 16; ++c) norm += n(i, j, c) * n(i, j, c);
      for (int c = 0; c < 16; ++c) n(i, j, c) /= std::sqrt(norm);
    }
  auto cn = volume_of(tape, n, {n}).value();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 9; ++j)
      for (int k = 0; k < 9; ++k) CHECK(cn(i, j, j) >= cn(i, j, k));
}

TEST_CASE("correlation volume gradients") {
  Rng rng(9);
  auto t = random_tensor(3, 5, 4, rng), s1 = random_tensor(3, 5, 4, rng), s2 = random_tensor(3, 5, 4, rng);
  auto rt = pgtest::check_input(t, [&](Tape<double>& tape, Var<double> tv) {
    return pgtest::projection_loss(correlation_volume<double>(tv, {tape.constant(s1), tape.constant(s2)}));
  }, 1e-5);
  CHECK(rt.passed(1e-6));
  auto rs = pgtest::check_input(s1, [&](Tape<double>& tape, Var<double> sv) {
    return pgtest::projection_loss(correlation_volume<double>(tape.constant(t), {sv, tape.constant(s2)}));
  }, 1e-5);
  CHECK(rs.passed(1e-6));
}

TEST_CASE("lookup column map: identity at the plane, shift for a rectified pair") {
  const auto g = rectified(16, 0.2, 2.0);
  double k = 0, dk = 0;
  REQUIRE(g.column(1, 5, 2.0, k, dk));
  CHECK(k == doctest::Approx(5.0).epsilon(1e-14));
  // Source center at +b: prewarped column = j + f·b·(1/D0 − 1/D).
  REQUIRE(g.column(1, 5, 1.0, k, dk));
  CHECK(k == doctest::Approx(5.0 + 10 * 0.2 * (1 / 2.0 - 1 / 1.0)).epsilon(1e-14));
  const double h = 1e-6;
  double kp, km, dd;
  g.column(1, 7, 1.5 + h, kp, dd);
  g.column(1, 7, 1.5 - h, km, dd);
  g.column(1, 7, 1.5, k, dk);
  CHECK(dk == doctest::Approx((kp - km) / (2 * h)).epsilon(1e-7));
}

TEST_CASE("lookup gathers samples centred on k*") {
  Rng rng(10);
  const int h = 4, w = 16;
  auto t = random_tensor(h, w, 3, rng), s = random_tensor(h, w, 3, rng);
  Tape<double> tape;
  auto vol = volume_of(tape, t, {s});
  const auto g = rectified(w, 0.2, 2.0);
  // D = D0 → k* = j exactly.
  auto d0 = tape.constant(Tensor3<double>::constant(h, w, 1, 2.0));
  auto r0 = lookup_correlation(vol, d0, g, 0).value();
  CHECK(r0.channels() == 1);
  auto r2 = lookup_correlation(vol, d0, g, 2).value();
  CHECK(r2.channels() == 5);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      CHECK(r0(i, j, 0) == vol.value()(i, j, j));
      CHECK(r2(i, j, 2) == vol.value()(i, j, j));
      if (j + 1 < w) CHECK(r2(i, j, 3) == vol.value()(i, j, j + 1));
      if (j == 0) CHECK(r2(i, j, 1) == 0.0);
    }
  // Fractional position: 1/D = 1/D0 − 0.25/(f·b) shifts k* by +0.25 px.
  const double dq = 1.0 / (0.5 - 0.125);
  auto rq = lookup_correlation(vol, tape.constant(Tensor3<double>::constant(h, w, 1, dq)), g, 0).value();
  CHECK(rq(2, 6, 0) == doctest::Approx(0.75 * vol.value()(2, 6, 6) + 0.25 * vol.value()(2, 6, 7)).epsilon(1e-12));
  // Far out of range → zeros.
  auto rf = lookup_correlation(vol, tape.constant(Tensor3<double>::constant(h, w, 1, 0.05)), g, 2).value();
  CHECK(rf.data().cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(lookup_correlation(vol, d0, g, -1), std::invalid_argument);
}

TEST_CASE("lookup gradients w.r.t. volume and depth") {
  Rng rng(11);
  const int h = 3, w = 12;
  LookupGeometry<double> g;
  g.intrinsics = {9, 9, 6, 1.5, w, h};
  g.plane_depth = 2.0;
  g.source_center = Vec3<double>(0.8, 0.05, 0.3);
  auto t = random_tensor(h, w, 4, rng), s = random_tensor(h, w, 4, rng);
  Tensor3<double> depth(h, w, 1);
  for (Eigen::Index i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.7, 2.4);
  auto rv = pgtest::check_input(t, [&](Tape<double>& tape, Var<double> tv) {
    auto vol = correlation_volume<double>(tv, {tape.constant(s)});
    return pgtest::projection_loss(lookup_correlation(vol, tape.constant(depth), g, 2));
  }, 1e-5);
  CHECK(rv.passed(1e-6));
  auto rd = pgtest::check_input(depth, [&](Tape<double>& tape, Var<double> dv) {
    auto vol = correlation_volume<double>(tape.constant(t), {tape.constant(s)});
    return pgtest::projection_loss(lookup_correlation(vol, dv, g, 2));
  }, 1e-7);
  INFO(rd.max_rel_error);
  CHECK(rd.passed(1e-4));
}
