#include "opbn/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "opbn/error.hpp"

namespace opbn {

double clamp_log_std(double raw) { return std::clamp(raw, kLogStdMin, kLogStdMax); }

double clamp_log_std_slope(double raw) { return (raw >= kLogStdMin && raw <= kLogStdMax) ? 1.0 : 0.0; }

DiagGaussian::DiagGaussian(std::vector<double> mean, std::vector<double> log_std)
    : mean_(std::move(mean)), log_std_(std::move(log_std)) {
  if (mean_.size() != log_std_.size()) throw ShapeError("DiagGaussian: mean and log_std lengths differ");
  for (std::size_t h = 0; h < mean_.size(); ++h) {
    if (!std::isfinite(mean_[h]) || !std::isfinite(log_std_[h])) {
      throw NumericError("DiagGaussian: non-finite parameter in dimension " + std::to_string(h));
    }
    log_std_[h] = clamp_log_std(log_std_[h]);
  }
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

double DiagGaussian::stddev(std::size_t h) const { return std::exp(log_std_[h]); }

double DivergenceVector::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double DivergenceVector::weighted_sum(std::span<const double> mask) const {
  if (mask.size() != values.size()) throw ShapeError("DivergenceVector::weighted_sum: mask length mismatch");
  double s = 0.0;
  for (std::size_t h = 0; h < values.size(); ++h) s += mask[h] * values[h];
  return s;
}

std::vector<double> sample_reparam(const DiagGaussian& q, std::span<const double> eps) {
  if (eps.size() != q.dim()) throw ShapeError("sample_reparam: noise length does not match dimension");
  std::vector<double> z(q.dim());
  for (std::size_t h = 0; h < z.size(); ++h) z[h] = q.mean()[h] + q.stddev(h) * eps[h];
  return z;
}

double kl_to_std_normal(const DiagGaussian& q) {
  double kl = 0.0;
  for (std::size_t h = 0; h < q.dim(); ++h) {
    const double m = q.mean()[h];
    const double s = q.log_std()[h];
    kl += 0.5 * (m * m + std::exp(2.0 * s) - 1.0 - 2.0 * s);
  }
  return kl;
}

double kl_univariate(double mean_a, double log_std_a, double mean_b, double log_std_b) {
  const double var_ratio = std::exp(2.0 * (log_std_a - log_std_b));
  const double d = mean_a - mean_b;
  return log_std_b - log_std_a + 0.5 * (var_ratio + d * d * std::exp(-2.0 * log_std_b)) - 0.5;
}

double sym_kl_univariate(double mean_a, double log_std_a, double mean_b, double log_std_b, SymKlGradient* grad) {
  // The log-variance terms of the two directions cancel:
  // D = 1/4 [ (va + d^2)/vb + (vb + d^2)/va ] - 1/2.
  // Swapping a and b only swaps the operands of a commutative sum, so the
  // result is bit-identical either way.
  const double va = std::exp(2.0 * log_std_a);
  const double vb = std::exp(2.0 * log_std_b);
  const double d = mean_a - mean_b;
  const double d2 = d * d;
  const double value = 0.25 * ((va + d2) / vb + (vb + d2) / va) - 0.5;
  if (grad != nullptr) {
    const double dm = 0.5 * d * (1.0 / va + 1.0 / vb);
    grad->mean_a = dm;
    grad->mean_b = -dm;
    grad->log_std_a = 0.5 * (va / vb - (vb + d2) / va);
    grad->log_std_b = 0.5 * (vb / va - (va + d2) / vb);
  }
  // Rounding can leave a tiny negative value for identical inputs.
  return std::max(value, 0.0);
}

DivergenceVector sym_kl_per_dim(const DiagGaussian& a, const DiagGaussian& b) {
  if (a.dim() != b.dim()) throw ShapeError("sym_kl_per_dim: dimensions differ");
  DivergenceVector out;
  out.values.resize(a.dim());
  for (std::size_t h = 0; h < a.dim(); ++h) {
    out.values[h] = sym_kl_univariate(a.mean()[h], a.log_std()[h], b.mean()[h], b.log_std()[h]);
  }
  return out;
}

namespace {

double log_normal_pdf(double x, double mean, double log_std) {
  const double z = (x - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

// log(0.5 p + 0.5 q) from log p and log q.
double log_mixture(double lp, double lq) {
  const double hi = std::max(lp, lq);
  return hi + std::log(0.5 * std::exp(lp - hi) + 0.5 * std::exp(lq - hi));
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

}  // namespace

JsEstimate js_mc_estimate(const DiagGaussian& a, const DiagGaussian& b, std::size_t samples, Stream& rng) {
  if (a.dim() != b.dim()) throw ShapeError("js_mc_estimate: dimensions differ");
  if (samples < 1000) throw ContractError("js_mc_estimate: need at least 1000 samples");
  JsEstimate out;
  out.estimate.resize(a.dim());
  out.std_error.resize(a.dim());
  const double n = double(samples);
  for (std::size_t h = 0; h < a.dim(); ++h) {
    const double ma = a.mean()[h], sa = a.log_std()[h];
    const double mb = b.mean()[h], sb = b.log_std()[h];
    // E_a[log a - log m] and E_b[log b - log m], each from its own sample.
    auto term = [&](double mean, double log_std, bool from_a) {
      double sum = 0.0, sum_sq = 0.0;
      for (std::size_t s = 0; s < samples; ++s) {
        const double x = mean + std::exp(log_std) * rng.normal();
        const double la = log_normal_pdf(x, ma, sa);
        const double lb = log_normal_pdf(x, mb, sb);
        const double f = (from_a ? la : lb) - log_mixture(la, lb);
        sum += f;
        sum_sq += f * f;
      }
      const double mu = sum / n;
      return Moments{mu, std::max(0.0, sum_sq / n - mu * mu) * n / (n - 1.0)};
    };
    const Moments fa = term(ma, sa, true);
    const Moments fb = term(mb, sb, false);
    out.estimate[h] = 0.5 * fa.mean + 0.5 * fb.mean;
    out.std_error[h] = std::sqrt(0.25 * fa.var / n + 0.25 * fb.var / n);
  }
  return out;
}

}  // namespace opbn
