#pragma once

#include <algorithm>

#include "posegauss/grad_check.hpp"
#include "posegauss/ops.hpp"
#include "posegauss/rng.hpp"

#include <functional>
#include <span>

namespace pgtest {

using pg::Tape;
using pg::Tensor3;
using pg::Var;

template <typename Scalar = double>
Tensor3<Scalar> random_tensor(int h, int w, int c, pg::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor3<Scalar> t(h, w, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = Scalar(rng.uniform(lo, hi));
  return t;
}

/// Σ c_i·out_i with fixed pseudo-random c; turns any output into a scalar
/// loss whose gradients are O(1) in every coordinate.
template <typename Scalar>
Var<Scalar> projection_loss(Var<Scalar> out, std::uint64_t seed = 99) {
  pg::Rng rng(seed);
  const Tensor3<Scalar>& v = out.value();
  Var<Scalar> c = out.tape->constant(random_tensor<Scalar>(v.height(), v.width(), v.channels(), rng, 0.5, 1.5));
  return pg::sum(pg::mul(out, c));
}

using BuildFn = std::function<Var<double>(Tape<double>&)>;

/// Finite-difference check of every parameter in `store` for the scalar
/// built by `build`; returns the worst report.
///
/// `rel_floor` > 0 judges entries smaller than rel_floor·(largest gradient)
/// against that scale instead of their own size. Deep compositions have
/// entries far below the finite-difference roundoff level.
inline pg::GradCheckReport check_store(pg::ParamStore<double>& store, const BuildFn& build,
                                       double eps, int max_coords_per_param = 0,
                                       double rel_floor = 0) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  double gmax = 0;
  for (std::size_t k = 0; k < store.count(); ++k)
    if (store.at(k).size() > 0) gmax = std::max(gmax, store.at(k).grad.cwiseAbs().maxCoeff());
  const double floor = std::max(1e-8, rel_floor * gmax);
  pg::GradCheckReport worst;
  auto f = [&]() {
    Tape<double> tape;
    return build(tape).value()[0];
  };
  for (std::size_t k = 0; k < store.count(); ++k) {
    auto& p = store.at(k);
    Eigen::VectorXd analytic = p.grad;
    std::vector<long> idx;
    if (max_coords_per_param > 0 && p.size() > max_coords_per_param) {
      pg::Rng rng(k + 7);
      for (int i = 0; i < max_coords_per_param; ++i) idx.push_back(long(rng.index(int(p.size()))));
    }
    auto r = pg::grad_check<double>(f, std::span<double>(p.value.data(), p.value.size()),
                                    std::span<const double>(analytic.data(), analytic.size()), eps, idx,
                                    floor);
    if (!r.finite || r.max_rel_error > worst.max_rel_error) worst = r;
  }
  return worst;
}

/// Finite-difference check of the gradient with respect to an input tensor.
inline pg::GradCheckReport check_input(Tensor3<double> x,
                                       const std::function<Var<double>(Tape<double>&, Var<double>)>& build,
                                       double eps, double rel_floor = 0) {
  Eigen::VectorXd analytic;
  {
    Tape<double> tape;
    Var<double> xv = tape.leaf(x);
    tape.backward(build(tape, xv));
    analytic = tape.grad(xv).data();
  }
  const double floor = std::max(1e-8, rel_floor * analytic.cwiseAbs().maxCoeff());
  auto f = [&]() {
    Tape<double> tape;
    return build(tape, tape.leaf(x)).value()[0];
  };
  return pg::grad_check<double>(f, std::span<double>(x.ptr(), x.size()),
                                std::span<const double>(analytic.data(), analytic.size()), eps, {}, floor);
}

}  // namespace pgtest
