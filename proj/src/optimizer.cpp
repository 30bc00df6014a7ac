#include "opbn/optimizer.hpp"

#include <cmath>

#include "opbn/error.hpp"

namespace opbn {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "rmsprop-momentum"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop-momentum" || name == "rmsprop") return OptimizerKind::rmsprop_momentum;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or rmsprop-momentum)");
}

double OptimizerConfig::effective_epsilon() const {
  if (epsilon) return *epsilon;
  return kind == OptimizerKind::adam ? 1e-8 : 1e-4;
}

OptimizerState OptimizerState::create(const OptimizerConfig& config, std::size_t parameter_count) {
  OptimizerState s;
  s.config = config;
  s.first.assign(parameter_count, 0.0);
  s.second.assign(parameter_count, 0.0);
  if (config.kind == OptimizerKind::rmsprop_momentum) s.third.assign(parameter_count, 0.0);
  return s;
}

void optimizer_step(OptimizerState& state, FlatParamView& params, const FlatParamView& grads) {
  if (!params.same_layout(grads)) throw ContractError("optimizer_step: parameter and gradient layouts differ");
  if (state.first.size() != params.size()) {
    throw ContractError("optimizer_step: optimizer state sized for " + std::to_string(state.first.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }

  const std::vector<double> g = grads.flatten();
  double sq = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!std::isfinite(g[k])) {
      throw NumericError("optimizer_step: non-finite gradient at offset " + std::to_string(k) + " (" +
                         grads.describe(k) + ")");
    }
    sq += g[k] * g[k];
  }
  const auto& cfg = state.config;
  double scale = 1.0;
  if (cfg.clip_norm > 0.0 && std::sqrt(sq) > cfg.clip_norm) scale = cfg.clip_norm / std::sqrt(sq);

  std::vector<double> p = params.flatten();
  state.step += 1;
  const double eps = cfg.effective_epsilon();
  if (cfg.kind == OptimizerKind::adam) {
    const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] * scale;
      state.first[k] = cfg.beta1 * state.first[k] + (1.0 - cfg.beta1) * gk;
      state.second[k] = cfg.beta2 * state.second[k] + (1.0 - cfg.beta2) * gk * gk;
      p[k] -= cfg.learning_rate * (state.first[k] / c1) / (std::sqrt(state.second[k] / c2) + eps);
    }
  } else {
    // Centred rmsprop with momentum: first = E[g^2], second = E[g], third = velocity.
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] * scale;
      state.first[k] = cfg.decay * state.first[k] + (1.0 - cfg.decay) * gk * gk;
      state.second[k] = cfg.decay * state.second[k] + (1.0 - cfg.decay) * gk;
      const double var = state.first[k] - state.second[k] * state.second[k];
      state.third[k] = cfg.momentum * state.third[k] - cfg.learning_rate * gk / std::sqrt(var + eps);
      p[k] += state.third[k];
    }
  }
  params.unflatten(p);
}

}  // namespace opbn
