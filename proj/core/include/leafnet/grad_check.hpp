// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "leafnet/tensor.hpp"

namespace leafnet {

struct GradCheckResult {
  /// max over checked elements of |analytic - central| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Flat indices skipped because the one-sided differences disagree, i.e. a
  /// kink of a piecewise-linear op lies within eps of the point.
  std::vector<std::size_t> excluded;
};

/// Compares the tape gradient of a scalar f at x (f64 only) with central
/// finite differences. Throws NonFinite if f is NaN/Inf at any probe.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5, double kink_tolerance = 1e-3);

}  // namespace leafnet
