#include "opbn/objective_check.hpp"

#include "opbn/error.hpp"
#include "opbn/params.hpp"

namespace opbn {

TinyObjective TinyObjective::create(const TinyObjectiveSpec& spec) {
  if (spec.points < 3) throw ContractError("tiny objective: need at least 3 points");
  Stream rng(spec.seed, Purpose::probe);
  TinyObjective t;
  t.model = EncoderDecoder::create({spec.data_dim, spec.latent_dim, spec.hidden, spec.decoder}, rng);
  // Non-zero biases so no coordinate sits at an exactly symmetric point.
  for (auto* net : {&t.model.encoder, &t.model.decoder}) {
    for (auto& layer : net->layers) {
      for (double& b : layer.bias) b = 0.3 * rng.normal();
    }
  }
  t.masks = MaskPosterior::create(spec.queries, spec.latent_dim);
  for (double& v : t.masks.mean.values()) v = rng.normal();
  for (double& v : t.masks.log_std.values()) v = -1.0 + 0.5 * rng.normal();
  t.x = Matrix(spec.points, spec.data_dim);
  for (double& v : t.x.values()) v = rng.uniform();
  t.weight.assign(spec.points, spec.data_weight);
  for (std::size_t k = 0; k < spec.triplets; ++k) {
    Triplet tr;
    tr.query = static_cast<std::uint32_t>(k % spec.queries);
    tr.i = static_cast<std::uint32_t>(rng.below(spec.points));
    do tr.j = static_cast<std::uint32_t>(rng.below(spec.points));
    while (tr.j == tr.i);
    do tr.l = static_cast<std::uint32_t>(rng.below(spec.points));
    while (tr.l == tr.i || tr.l == tr.j);
    t.triplets.push_back(tr);
  }
  t.triplet_scale = spec.triplet_scale;
  t.eps = Matrix(spec.points * spec.objective.mc_samples, spec.latent_dim);
  for (double& v : t.eps.values()) v = rng.normal();
  t.mask_eps = Matrix(spec.queries, spec.latent_dim);
  for (double& v : t.mask_eps.values()) v = rng.normal();
  t.objective = spec.objective;
  return t;
}

GradCheckReport check_objective_gradient(TinyObjective& t, const GradCheckOptions& options) {
  const bool masked = t.objective.masked;
  const MaskPosterior* masks = masked ? &t.masks : nullptr;
  const Matrix* mask_eps = masked ? &t.mask_eps : nullptr;
  const TripletBatch batch{t.triplets, t.triplet_scale};

  ModelGradients g = ModelGradients::zeros_like(t.model, masks);
  elbo_opbn(t.model, masks, t.x, t.weight, batch, t.eps, mask_eps, t.objective, &g);

  FlatParamView params, grads;
  t.model.register_params(params);
  g.model.register_params(grads);
  if (masked) {
    t.masks.register_params(params);
    g.masks.register_params(grads);
  }
  const std::vector<double> start = params.flatten();
  const auto loss = [&](std::span<const double> p) {
    params.unflatten(p);
    return elbo_opbn(t.model, masks, t.x, t.weight, batch, t.eps, mask_eps, t.objective).elbo;
  };
  GradCheckReport report = grad_check(loss, start, grads.flatten(), options);
  params.unflatten(start);
  return report;
}

}  // namespace opbn
