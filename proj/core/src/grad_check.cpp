// SPDX-License-Identifier: Apache-2.0
#include "leafnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace leafnet {

namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  NoGradGuard guard;
  const Tensor y = f(x);
  require(y.numel() == 1, ErrorCode::NotScalar, "grad_check requires a scalar-valued function");
  const double v = y.item();
  require(std::isfinite(v), ErrorCode::NonFinite, "function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                           double kink_tolerance) {
  require(x.dtype() == DType::F64, ErrorCode::DTypeMismatch, "grad_check requires f64");
  require(eps > 0, ErrorCode::InvalidArgument, "eps must be positive");

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape::current().clear();
  const Tensor y = f(probe);
  require(y.numel() == 1, ErrorCode::NotScalar, "grad_check requires a scalar-valued function");
  require(std::isfinite(y.item()), ErrorCode::NonFinite, "function value is not finite");
  backward(y);
  const std::vector<double> analytic =
      probe.has_grad() ? probe.grad().to_vector() : std::vector<double>(x.numel(), 0.0);
  const double f0 = y.item();

  GradCheckResult result;
  Tensor shifted = x.clone();
  auto values = shifted.mutable_values<double>();
  const auto base = x.values<double>();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = base[i] + eps;
    const double f_plus = eval_scalar(f, shifted);
    values[i] = base[i] - eps;
    const double f_minus = eval_scalar(f, shifted);
    values[i] = base[i];

    const double central = (f_plus - f_minus) / (2 * eps);
    const double forward = (f_plus - f0) / eps;
    const double backward_diff = (f0 - f_minus) / eps;
    if (std::abs(forward - backward_diff) > kink_tolerance * std::max(1.0, std::abs(central))) {
      result.excluded.push_back(i);
      continue;
    }
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.checked;
  }
  return result;
}

}  // namespace leafnet
