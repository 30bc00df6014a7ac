#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "opbn/rng.hpp"

namespace opbn {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Clamps a raw log standard deviation into [kLogStdMin, kLogStdMax].
double clamp_log_std(double raw);

/// d clamp_log_std / d raw (1 inside the interval, 0 outside).
double clamp_log_std_slope(double raw);

/// Diagonal Gaussian N(mean, diag(exp(2 log_std))).
class DiagGaussian {
 public:
  DiagGaussian() = default;
  /// Clamps every log_std entry; throws on size mismatch or non-finite input.
  DiagGaussian(std::vector<double> mean, std::vector<double> log_std);

  static DiagGaussian standard(std::size_t dim);

  [[nodiscard]] std::size_t dim() const { return mean_.size(); }
  [[nodiscard]] const std::vector<double>& mean() const { return mean_; }
  [[nodiscard]] const std::vector<double>& log_std() const { return log_std_; }
  [[nodiscard]] double stddev(std::size_t h) const;

 private:
  std::vector<double> mean_;
  std::vector<double> log_std_;
};

/// Per-dimension divergences, all entries >= 0.
struct DivergenceVector {
  std::vector<double> values;

  [[nodiscard]] double sum() const;
  /// Sum of mask[h] * values[h].
  [[nodiscard]] double weighted_sum(std::span<const double> mask) const;
};

/// z = mean + exp(log_std) * eps
std::vector<double> sample_reparam(const DiagGaussian& q, std::span<const double> eps);

/// KL(q || N(0, I)) in closed form.
double kl_to_std_normal(const DiagGaussian& q);

/// KL(N(mean_a, e^{2 log_std_a}) || N(mean_b, e^{2 log_std_b})) for scalars.
double kl_univariate(double mean_a, double log_std_a, double mean_b, double log_std_b);

struct SymKlGradient {
  double mean_a = 0.0;
  double log_std_a = 0.0;
  double mean_b = 0.0;
  double log_std_b = 0.0;
};

/// 0.5 KL(a||b) + 0.5 KL(b||a) for univariate Gaussians; optionally its gradient.
double sym_kl_univariate(double mean_a, double log_std_a, double mean_b, double log_std_b,
                         SymKlGradient* grad = nullptr);

/// Symmetrised KL per latent dimension. Exactly symmetric in (a, b).
DivergenceVector sym_kl_per_dim(const DiagGaussian& a, const DiagGaussian& b);

struct JsEstimate {
  std::vector<double> estimate;
  std::vector<double> std_error;
};

/// Monte-Carlo Jensen-Shannon divergence per dimension (nats), drawing
/// `samples` points from each of a and b. Reference oracle only.
JsEstimate js_mc_estimate(const DiagGaussian& a, const DiagGaussian& b, std::size_t samples, Stream& rng);

}  // namespace opbn
