#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "opbn/grad_check.hpp"
#include "opbn/model.hpp"

namespace opbn {

struct TinyObjectiveSpec {
  std::size_t data_dim = 6;
  std::size_t latent_dim = 3;
  std::vector<std::size_t> hidden{5};
  std::size_t points = 8;
  std::size_t triplets = 10;
  std::size_t queries = 2;
  DecoderFamily decoder = DecoderFamily::bernoulli;
  ObjectiveConfig objective{Likelihood::ber, true, 1, 1.0};
  double data_weight = 1.5;     // N / N_b
  double triplet_scale = 2.0;   // K / K_b
  std::uint64_t seed = 0;
};

/// A small, fully frozen instance of the joint objective: random weights and
/// masks, random data, random distinct-index triplets, fixed noise.
struct TinyObjective {
  EncoderDecoder model;
  MaskPosterior masks;
  Matrix x;
  std::vector<double> weight;
  std::vector<Triplet> triplets;
  double triplet_scale = 1.0;
  Matrix eps;
  Matrix mask_eps;
  ObjectiveConfig objective;

  static TinyObjective create(const TinyObjectiveSpec& spec);
};

/// Central-difference check of the analytic gradient of elbo_opbn over every
/// model and mask parameter.
GradCheckReport check_objective_gradient(TinyObjective& t, const GradCheckOptions& options);

}  // namespace opbn
