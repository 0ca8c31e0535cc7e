#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace pg {

struct GradCheckReport {
  double max_rel_error = 0.0;
  long worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool finite = true;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

/// Compares `analytic` against central differences of `f` over the
/// coordinates of `x` listed in `indices` (all of them when empty).
///
/// Error per coordinate is |a − n| / max(|a|, |n|, floor). `x` is restored
/// after each probe. A non-finite forward value marks the report as failed.
template <typename Scalar>
GradCheckReport grad_check(const std::function<Scalar()>& f, std::span<Scalar> x,
                           std::span<const Scalar> analytic, Scalar eps,
                           const std::vector<long>& indices = {}, double floor = 1e-8) {
  GradCheckReport report;
  const double kFloor = floor;
  auto probe = [&](long i) {
    const Scalar saved = x[i];
    x[i] = saved + eps;
    const Scalar fp = f();
    x[i] = saved - eps;
    const Scalar fm = f();
    x[i] = saved;
    if (!std::isfinite(double(fp)) || !std::isfinite(double(fm))) {
      report.finite = false;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      return;
    }
    const double numeric = (double(fp) - double(fm)) / (2.0 * double(eps));
    const double a = double(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), kFloor});
    const double err = std::abs(a - numeric) / denom;
    if (err > report.max_rel_error || report.worst_index < 0) {
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  };
  if (indices.empty()) {
    for (long i = 0; i < long(x.size()) && report.finite; ++i) probe(i);
  } else {
    for (long i : indices) {
      if (!report.finite) break;
      probe(i);
    }
  }
  return report;
}

}  // namespace pg
