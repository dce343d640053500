#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "trident/tensor.hpp"

namespace trident {

struct CheckReport {
  Real max_relative_error = 0.0;
  Real max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  Real tolerance = 0.0;
  bool passed = true;
  std::vector<Real> analytic;
  std::vector<Real> numeric;
};

/// Compares the recorded gradient of a scalar-valued closure against central
/// differences. Relative error uses max(|analytic|, |numeric|, abs_floor) as
/// denominator so that exact zeros compare cleanly.
inline CheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input,
                              Real step = 1e-5, Real tol = 1e-4, Real abs_floor = 1e-6) {
  require(step > 0.0, "grad_check: step must be positive");
  CheckReport report;
  report.tolerance = tol;

  Tensor x = input.detach(true);
  Tensor y = fn(x);
  require(y.numel() == 1, "grad_check: closure must return a scalar, got dims ", to_string(y.dims()));
  if (y.requires_grad()) {
    backward(y);
    report.analytic.assign(x.grad().begin(), x.grad().end());
  }
  if (report.analytic.empty()) report.analytic.assign(x.numel(), 0.0);

  NoGradGuard no_grad;
  std::vector<Real> base(input.data().begin(), input.data().end());
  report.numeric.resize(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = [&](Real delta) {
      auto values = base;
      values[i] += delta;
      return fn(Tensor(input.dims(), std::move(values))).item();
    };
    report.numeric[i] = (probe(step) - probe(-step)) / (2.0 * step);
  }

  for (std::size_t i = 0; i < base.size(); ++i) {
    Real a = report.analytic[i], n = report.numeric[i];
    Real abs_err = std::abs(a - n);
    Real rel = abs_err / std::max({std::abs(a), std::abs(n), abs_floor});
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    if (rel > report.max_relative_error || !std::isfinite(rel)) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = std::isfinite(report.max_relative_error) && report.max_relative_error <= tol;
  return report;
}

}  // namespace trident
