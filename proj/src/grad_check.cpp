#include "opbn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "opbn/error.hpp"

namespace opbn {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_relative_error << " at coordinate " << worst_coordinate
     << " (analytic " << worst_analytic << ", numeric " << worst_numeric << ")";
  if (!non_finite.empty()) os << "; " << non_finite.size() << " coordinate(s) with non-finite loss";
  return os.str();
}

std::vector<double> numeric_gradient(const ScalarFunction& loss, std::span<const double> params, double step,
                                     std::vector<std::size_t>* non_finite) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double saved = p[k];
    p[k] = saved + step;
    const double up = loss(p);
    p[k] = saved - step;
    const double down = loss(p);
    p[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      if (non_finite) non_finite->push_back(k);
      grad[k] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

GradCheckReport grad_check(const ScalarFunction& loss, std::span<const double> params,
                           std::span<const double> analytic, const GradCheckOptions& options) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: gradient and parameter sizes differ");
  GradCheckReport report;
  const auto numeric = numeric_gradient(loss, params, options.step, &report.non_finite);
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    if (std::isnan(numeric[k])) continue;
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), options.denominator_floor});
    const double rel = std::abs(analytic[k] - numeric[k]) / denom;
    if (!(rel <= report.max_relative_error)) {
      report.max_relative_error = rel;
      report.worst_coordinate = k;
      report.worst_analytic = analytic[k];
      report.worst_numeric = numeric[k];
    }
  }
  report.passed = report.non_finite.empty() && report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace opbn
