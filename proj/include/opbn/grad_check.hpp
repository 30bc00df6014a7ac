#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace opbn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Lower bound on the denominator of the relative error, so coordinates
  /// whose true gradient is ~0 are judged by absolute error instead.
  double denominator_floor = 1e-8;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Coordinates where the loss was non-finite at a perturbed point.
  std::vector<std::size_t> non_finite;
  bool passed = false;

  [[nodiscard]] std::string summary() const;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference gradient of `loss` at `params`, coordinate by coordinate.
std::vector<double> numeric_gradient(const ScalarFunction& loss, std::span<const double> params, double step,
                                     std::vector<std::size_t>* non_finite = nullptr);

/// Compares `analytic` against central differences of `loss` around `params`.
GradCheckReport grad_check(const ScalarFunction& loss, std::span<const double> params,
                           std::span<const double> analytic, const GradCheckOptions& options = {});

}  // namespace opbn
