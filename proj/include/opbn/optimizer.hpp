#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opbn/params.hpp"

namespace opbn {

enum class OptimizerKind { adam, rmsprop_momentum };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;    // adam
  double beta2 = 0.999;  // adam
  double decay = 0.9;    // rmsprop: moving-average factor of squared gradients
  double momentum = 0.9; // rmsprop
  /// Stabilizer; when unset adam uses 1e-8 and rmsprop 1e-4.
  std::optional<double> epsilon;
  /// Rescale the whole gradient when its global L2 norm exceeds this; 0 disables.
  double clip_norm = 100.0;

  [[nodiscard]] double effective_epsilon() const;
};

/// Minimizer state. `first`, `second` and `third` hold per-parameter moments:
/// adam uses (m, v), rmsprop uses (mean square, mean gradient, velocity).
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<double> first;
  std::vector<double> second;
  std::vector<double> third;

  static OptimizerState create(const OptimizerConfig& config, std::size_t parameter_count);
};

/// One minimization step, in place. Throws NumericError naming the offending
/// parameter if any gradient entry is NaN or Inf; parameters are untouched then.
void optimizer_step(OptimizerState& state, FlatParamView& params, const FlatParamView& grads);

}  // namespace opbn
