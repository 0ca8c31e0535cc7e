#include "doctest.h"
#include "support.hpp"

#include "posegauss/layers.hpp"

using namespace pg;
using pgtest::projection_loss;
using pgtest::random_tensor;

namespace {

template <typename Scalar>
void set_all(ParamStore<Scalar>& store, Scalar v) {
  for (std::size_t i = 0; i < store.count(); ++i) store.at(i).value.setConstant(v);
}

}  // namespace

TEST_CASE("conv2d identity kernel with padding reproduces the input") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 3, 3, 2, 2, 1);
  set_all(store, 0.0);
  // center tap (1,1): weight(1,1,c,c) = 1
  for (int c = 0; c < 2; ++c) conv.weight->value[((1 * 3 + 1) * 2 + c) * 2 + c] = 1.0;
  Rng rng(3);
  Tape<double> tape;
  auto x = tape.constant(random_tensor(6, 5, 2, rng));
  auto y = conv2d(x, conv, 1, 1);
  CHECK(y.value().shape_string() == "6x5x2");
  CHECK((y.value().data() - x.value().data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d on a single pixel is w*v + b") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 1, 1, 1, 1, 1);
  conv.weight->value[0] = 2.5;
  conv.bias->value[0] = -0.75;
  Tape<double> tape;
  auto x = tape.constant(Tensor3<double>::constant(1, 1, 1, 3.0));
  CHECK(conv2d(x, conv, 1, 0).value()[0] == 2.5 * 3.0 - 0.75);
}

TEST_CASE("conv2d output size follows floor((H + 2p - k)/s) + 1") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 3, 3, 1, 4, 5);
  Tape<double> tape;
  auto x = tape.constant(Tensor3<double>(9, 7, 1));
  auto y = conv2d(x, conv, 2, 1);
  CHECK(y.height() == (9 + 2 - 3) / 2 + 1);
  CHECK(y.width() == (7 + 2 - 3) / 2 + 1);
  CHECK(y.channels() == 4);
  auto z = conv2d(x, conv, 3, 0);
  CHECK(z.height() == (9 - 3) / 3 + 1);
}

TEST_CASE("conv2d rejects mismatched channels naming both shapes") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 3, 3, 2, 4, 1);
  Tape<double> tape;
  auto x = tape.constant(Tensor3<double>(5, 5, 3));
  try {
    conv2d(x, conv, 1, 1);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("5x5x3") != std::string::npos);
    CHECK(msg.find("3x3x2x4") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(tape.constant(Tensor3<double>(5, 5, 2)), conv, 0, 1), std::invalid_argument);
}

TEST_CASE("conv2d is linear in the input for zero bias") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 3, 3, 3, 4, 11);
  Rng rng(4);
  auto xa = random_tensor(7, 6, 3, rng), xb = random_tensor(7, 6, 3, rng);
  const double a = 0.7, b = -1.3;
  Tensor3<double> xc = Tensor3<double>::zeros_like(xa);
  xc.data() = a * xa.data() + b * xb.data();
  Tape<double> tape;
  auto ya = conv2d(tape.constant(xa), conv, 2, 1).value().data();
  auto yb = conv2d(tape.constant(xb), conv, 2, 1).value().data();
  auto yc = conv2d(tape.constant(xc), conv, 2, 1).value().data();
  CHECK((yc - (a * ya + b * yb)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("conv2d gradients match central differences") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 3, 3, 2, 4, 21);
  Rng rng(5);
  for (Eigen::Index i = 0; i < conv.bias->size(); ++i) conv.bias->value[i] = rng.uniform(-1, 1);
  auto x = random_tensor(5, 5, 2, rng);
  auto build = [&](Tape<double>&, Var<double> xv) { return projection_loss(conv2d(xv, conv, 1, 1)); };
  auto rin = pgtest::check_input(x, build, 1e-5);
  CHECK(rin.passed(1e-6));
  auto rpar = pgtest::check_store(store, [&](Tape<double>& t) { return build(t, t.constant(x)); }, 1e-5);
  CHECK(rpar.passed(1e-6));
  // strided variant
  auto rs = pgtest::check_input(x, [&](Tape<double>&, Var<double> xv) {
    return projection_loss(conv2d(xv, conv, 2, 1));
  }, 1e-5);
  CHECK(rs.passed(1e-6));
}

TEST_CASE("residual block with zero weights is the identity skip") {
  ParamStore<double> store;
  auto block = make_residual(store, "r", 4, 4, 1, 2, 1);
  set_all(store, 0.0);
  Rng rng(6);
  Tape<double> tape;
  auto x = tape.constant(random_tensor(5, 4, 4, rng));
  auto y = residual_block(x, block);
  CHECK((y.value().data() - x.value().data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual block widening with zero main path equals the 1x1 projection") {
  ParamStore<double> store;
  auto block = make_residual(store, "r", 32, 64, 1, 4, 2);
  REQUIRE(block.projection.has_value());
  for (auto* p : {block.conv1.weight, block.conv1.bias, block.conv2.weight, block.conv2.bias})
    p->value.setZero();
  Rng rng(7);
  Tape<double> tape;
  auto x = tape.constant(random_tensor(3, 3, 32, rng));
  auto y = residual_block(x, block);
  auto proj = conv2d(x, *block.projection, 1, 0);
  CHECK((y.value().data() - proj.value().data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual block gradients match central differences") {
  ParamStore<double> store;
  auto block = make_residual(store, "r", 3, 4, 2, 2, 8);
  Rng rng(8);
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store.at(i).name.ends_with(".bias"))
      for (Eigen::Index j = 0; j < store.at(i).size(); ++j) store.at(i).value[j] = rng.uniform(-0.5, 0.5);
  auto x = random_tensor(6, 6, 3, rng);
  auto build = [&](Tape<double>&, Var<double> xv) { return projection_loss(residual_block(xv, block)); };
  CHECK(pgtest::check_input(x, build, 1e-6).passed(1e-5));
  CHECK(pgtest::check_store(store, [&](Tape<double>& t) { return build(t, t.constant(x)); }, 1e-6).passed(1e-5));
}

TEST_CASE("SE block with zero MLP halves the input") {
  ParamStore<double> store;
  auto se = make_se(store, "se", 8, 4, 1);
  set_all(store, 0.0);
  Rng rng(9);
  Tape<double> tape;
  auto x = tape.constant(random_tensor(4, 3, 8, rng));
  auto y = se_block(x, se);
  CHECK((y.value().data() - 0.5 * x.value().data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("SE pooling of a per-channel constant returns that constant") {
  Tape<double> tape;
  Tensor3<double> x(4, 5, 3);
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 5; ++xx)
      for (int c = 0; c < 3; ++c) x(y, xx, c) = 0.25 * (c + 1);
  auto pooled = global_avg_pool(tape.constant(x));
  for (int c = 0; c < 3; ++c) CHECK(pooled.value()(0, 0, c) == doctest::Approx(0.25 * (c + 1)).epsilon(1e-15));
}

TEST_CASE("SE gates stay strictly inside (0,1) and gradients match") {
  ParamStore<double> store;
  auto se = make_se(store, "se", 6, 2, 3);
  Rng rng(10);
  auto x = random_tensor(4, 4, 6, rng, -3, 3);
  {
    Tape<double> tape;
    auto g = se_gate(tape.constant(x), se).value();
    CHECK(g.data().minCoeff() > 0.0);
    CHECK(g.data().maxCoeff() < 1.0);
  }
  auto build = [&](Tape<double>&, Var<double> xv) { return projection_loss(se_block(xv, se)); };
  CHECK(pgtest::check_input(x, build, 1e-5).passed(1e-6));
  CHECK(pgtest::check_store(store, [&](Tape<double>& t) { return build(t, t.constant(x)); }, 1e-5).passed(1e-6));
}

TEST_CASE("conv GRU zero-weight cases") {
  ParamStore<double> store;
  auto gru = make_conv_gru(store, "g", 3, 2, 1);
  set_all(store, 0.0);
  Rng rng(11);
  Tape<double> tape;
  auto h = tape.constant(random_tensor(4, 4, 3, rng));
  auto x = tape.constant(random_tensor(4, 4, 2, rng));
  auto h1 = conv_gru_step(h, x, gru);
  CHECK((h1.value().data() - 0.5 * h.value().data()).cwiseAbs().maxCoeff() == 0.0);
  auto h0 = conv_gru_step(tape.constant(Tensor3<double>(4, 4, 3)), x, gru);
  CHECK(h0.value().data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv GRU with a saturated closed update gate keeps the hidden state") {
  ParamStore<double> store;
  auto gru = make_conv_gru(store, "g", 3, 2, 2);
  gru.update.bias->value.setConstant(-1000.0);
  Rng rng(12);
  Tape<double> tape;
  auto h = tape.constant(random_tensor(4, 4, 3, rng));
  auto x = tape.constant(random_tensor(4, 4, 2, rng));
  auto h1 = conv_gru_step(h, x, gru);
  CHECK((h1.value().data() - h.value().data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv GRU gradients through two chained steps") {
  ParamStore<double> store;
  auto gru = make_conv_gru(store, "g", 3, 2, 13);
  Rng rng(13);
  auto h0 = random_tensor(4, 5, 3, rng);
  auto x = random_tensor(4, 5, 2, rng);
  auto build = [&](Tape<double>& t, Var<double> hv) {
    auto xv = t.constant(x);
    return projection_loss(conv_gru_step(conv_gru_step(hv, xv, gru), xv, gru));
  };
  CHECK(pgtest::check_input(h0, build, 1e-5).passed(1e-6));
  CHECK(pgtest::check_store(store, [&](Tape<double>& t) { return build(t, t.constant(h0)); }, 1e-5).passed(1e-6));
}

TEST_CASE("backprop: linear loss gives the input as gradient; untouched params get zero") {
  ParamStore<double> store;
  auto used = make_conv(store, "used", 1, 1, 3, 1, 1);
  auto unused = make_conv(store, "unused", 1, 1, 3, 1, 1);
  unused.weight->grad.setConstant(0.0);
  Tensor3<double> x(1, 1, 3);
  x[0] = 0.5;
  x[1] = -2.0;
  x[2] = 3.25;
  Tape<double> tape;
  auto loss = sum(conv2d(tape.constant(x), used, 1, 0));
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(used.weight->grad[i] == x[i]);
  CHECK(unused.weight->grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(unused.bias->grad.cwiseAbs().maxCoeff() == 0.0);

  Tape<double> t2;
  auto w = t2.leaf(x);
  auto fixed = t2.constant(Tensor3<double>::constant(1, 1, 3, 1.5));
  t2.backward(sum(mul(w, fixed)));
  for (int i = 0; i < 3; ++i) CHECK(t2.grad(w)[i] == 1.5);
}

TEST_CASE("backprop gradients accumulate until zeroed") {
  ParamStore<double> store;
  auto conv = make_conv(store, "c", 1, 1, 1, 1, 1);
  Tensor3<double> x = Tensor3<double>::constant(1, 1, 1, 2.0);
  for (int k = 0; k < 2; ++k) {
    Tape<double> tape;
    tape.backward(sum(conv2d(tape.constant(x), conv, 1, 0)));
  }
  CHECK(conv.weight->grad[0] == 4.0);
  store.zero_grad();
  CHECK(conv.weight->grad[0] == 0.0);
}

TEST_CASE("backprop rejects a non-scalar terminal") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor3<double>(2, 2, 1));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("backprop through conv -> SE -> GRU -> scalar matches finite differences") {
  ParamStore<double> store;
  auto conv = make_conv(store, "conv", 3, 3, 2, 4, 31);
  auto se = make_se(store, "se", 4, 2, 31);
  auto gru = make_conv_gru(store, "gru", 3, 4, 31);
  Rng rng(14);
  auto x = random_tensor(5, 5, 2, rng);
  auto h = random_tensor(5, 5, 3, rng);
  auto build = [&](Tape<double>& t) {
    auto f = se_block(conv2d(t.constant(x), conv, 1, 1), se);
    return projection_loss(conv_gru_step(t.constant(h), f, gru));
  };
  CHECK(pgtest::check_store(store, build, 1e-5).passed(1e-5));
}

TEST_CASE("grad_check analytic cases") {
  std::vector<double> x{3.0};
  std::vector<double> g{6.0};
  auto f = [&]() { return x[0] * x[0]; };
  auto r = grad_check<double>(f, std::span<double>(x), std::span<const double>(g), 1e-5);
  CHECK(r.passed(1e-9));
  std::vector<double> zero{0.0};
  auto c = grad_check<double>([] { return 4.0; }, std::span<double>(x), std::span<const double>(zero), 1e-5);
  CHECK(c.max_rel_error == 0.0);
  auto bad = grad_check<double>([&] { return std::log(-x[0]); }, std::span<double>(x),
                                std::span<const double>(zero), 1e-5);
  CHECK_FALSE(bad.finite);
  CHECK_FALSE(bad.passed(1.0));
}

TEST_CASE("32-bit gradients agree with finite differences to 1e-2") {
  ParamStore<float> store;
  auto conv = make_conv(store, "c", 3, 3, 2, 3, 41);
  Rng rng(15);
  auto x = random_tensor<float>(5, 5, 2, rng);
  auto build = [&](Tape<float>& t) { return projection_loss(conv2d(t.constant(x), conv, 1, 1)); };
  store.zero_grad();
  {
    Tape<float> t;
    t.backward(build(t));
  }
  Eigen::VectorXf analytic = conv.weight->grad;
  auto f = [&]() {
    Tape<float> t;
    return build(t).value()[0];
  };
  auto r = grad_check<float>(f, std::span<float>(conv.weight->value.data(), conv.weight->size()),
                             std::span<const float>(analytic.data(), analytic.size()), 1e-2f);
  CHECK(r.passed(1e-2));
}

TEST_CASE("layer initialisation and forward are deterministic per seed") {
  ParamStore<double> a, b, c;
  auto ra = make_residual(a, "r", 4, 8, 2, 2, 77);
  auto rb = make_residual(b, "r", 4, 8, 2, 2, 77);
  make_residual(c, "r", 4, 8, 2, 2, 78);
  for (std::size_t i = 0; i < a.count(); ++i) CHECK(a.at(i).value == b.at(i).value);
  CHECK(a.at(0).value != c.at(0).value);
  Rng rng(16);
  auto x = random_tensor(6, 6, 4, rng);
  Tape<double> ta, tb;
  CHECK(residual_block(ta.constant(x), ra).value().data() == residual_block(tb.constant(x), rb).value().data());
}
