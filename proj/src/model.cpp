#include "opbn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "opbn/error.hpp"

namespace opbn {
namespace {

double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

std::size_t decoder_width(const ModelDims& dims) {
  return dims.decoder == DecoderFamily::bernoulli ? dims.data_dim : 2 * dims.data_dim;
}

// Log-likelihood of one data row under one decoder output row; writes
// d loglik / d output into `grad` when non-empty.
double row_loglik(DecoderFamily family, std::span<const double> out, std::span<const double> x,
                  std::span<double> grad) {
  const std::size_t d = x.size();
  double ll = 0.0;
  if (family == DecoderFamily::bernoulli) {
    for (std::size_t k = 0; k < d; ++k) {
      const double a = out[k];
      ll += x[k] * a - softplus(a);
      if (!grad.empty()) grad[k] = x[k] - sigmoid(a);
    }
  } else {
    for (std::size_t k = 0; k < d; ++k) {
      const double mu = out[k], log_sigma = out[d + k];
      const double prec = std::exp(-2.0 * log_sigma);
      const double r = x[k] - mu;
      ll += -kHalfLog2Pi - log_sigma - 0.5 * r * r * prec;
      if (!grad.empty()) {
        grad[k] = r * prec;
        grad[d + k] = -1.0 + r * r * prec;
      }
    }
  }
  return ll;
}

struct Encoded {
  MlpForward forward;
  PosteriorBatch posterior;
};

Encoded run_encoder(const EncoderDecoder& model, const Matrix& x) {
  if (x.cols() != model.data_dim) {
    throw ShapeError("encoder: batch has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(model.data_dim));
  }
  Encoded e{mlp_forward(model.encoder, x), {}};
  const std::size_t h = model.latent_dim;
  e.posterior.mean = Matrix(x.rows(), h);
  e.posterior.log_std = Matrix(x.rows(), h);
  e.posterior.raw_log_std = Matrix(x.rows(), h);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto out = e.forward.output.row(r);
    for (std::size_t k = 0; k < h; ++k) {
      e.posterior.mean(r, k) = out[k];
      e.posterior.raw_log_std(r, k) = out[h + k];
      e.posterior.log_std(r, k) = clamp_log_std(out[h + k]);
    }
  }
  return e;
}

// Accumulates the data term. `upstream` (B x 2H) receives d elbo / d (mean, clamped log_std).
ObjectiveTerms data_term(const EncoderDecoder& model, const Matrix& x, std::span<const double> weight,
                         const Matrix& eps, const ObjectiveConfig& config, const PosteriorBatch& post,
                         Matrix* upstream, ModelGradients* grads) {
  const std::size_t b = x.rows(), h = model.latent_dim, l_count = config.mc_samples;
  if (l_count < 1) throw ContractError("objective: need at least one Monte-Carlo sample");
  if (weight.size() != b) throw ShapeError("objective: data weight length does not match batch");
  if (eps.rows() != b * l_count || eps.cols() != h) {
    throw ShapeError("objective: noise must be (B*L) x H = " + std::to_string(b * l_count) + "x" + std::to_string(h));
  }

  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < b; ++r) {
    if (weight[r] != 0.0) active.push_back(r);
  }
  ObjectiveTerms terms;
  if (active.empty()) return terms;

  Matrix z(active.size() * l_count, h);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t r = active[a];
    for (std::size_t s = 0; s < l_count; ++s) {
      auto zr = z.row(a * l_count + s);
      const auto e = eps.row(r * l_count + s);
      for (std::size_t k = 0; k < h; ++k) zr[k] = post.mean(r, k) + std::exp(post.log_std(r, k)) * e[k];
    }
  }
  const MlpForward dec = mlp_forward(model.decoder, z);
  Matrix dec_up;
  if (grads) dec_up = Matrix(dec.output.rows(), dec.output.cols());

  const double inv_l = 1.0 / double(l_count);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t r = active[a];
    double recon = 0.0;
    for (std::size_t s = 0; s < l_count; ++s) {
      const std::size_t zr = a * l_count + s;
      std::span<double> g = grads ? dec_up.row(zr) : std::span<double>{};
      recon += row_loglik(model.family, dec.output.row(zr), x.row(r), g);
      for (double& v : g) v *= weight[r] * inv_l;
    }
    recon *= inv_l;
    double kl = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      const double m = post.mean(r, k), s = post.log_std(r, k);
      kl += 0.5 * (m * m + std::exp(2.0 * s) - 1.0 - 2.0 * s);
    }
    terms.recon += weight[r] * recon;
    terms.kl += weight[r] * kl;
  }
  terms.elbo = terms.recon - terms.kl;

  if (grads) {
    const Matrix gz = mlp_backward_accumulate(dec.tape, dec_up, grads->model.decoder);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t r = active[a];
      auto up = upstream->row(r);
      for (std::size_t k = 0; k < h; ++k) {
        const double m = post.mean(r, k), sd = std::exp(post.log_std(r, k));
        double g_mean = -weight[r] * m;
        double g_log_std = weight[r] * (1.0 - sd * sd);
        for (std::size_t s = 0; s < l_count; ++s) {
          const double g = gz(a * l_count + s, k);
          g_mean += g;
          g_log_std += g * sd * eps(r * l_count + s, k);
        }
        up[k] += g_mean;
        up[h + k] += g_log_std;
      }
    }
  }
  return terms;
}

// Converts d/d(clamped log_std) to d/d(raw output) and backpropagates the encoder.
void finish_encoder(const Encoded& enc, Matrix& upstream, ModelGradients& grads, std::size_t h) {
  for (std::size_t r = 0; r < upstream.rows(); ++r) {
    for (std::size_t k = 0; k < h; ++k) upstream(r, h + k) *= clamp_log_std_slope(enc.posterior.raw_log_std(r, k));
  }
  mlp_backward_accumulate(enc.forward.tape, upstream, grads.model.encoder);
}

}  // namespace

std::string to_string(Likelihood l) { return l == Likelihood::ber ? "ber" : "tber"; }
std::string to_string(DecoderFamily f) { return f == DecoderFamily::bernoulli ? "bernoulli" : "gaussian"; }

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "ber") return Likelihood::ber;
  if (s == "tber") return Likelihood::tber;
  throw ConfigError("unknown likelihood '" + s + "' (expected ber or tber)");
}

DecoderFamily decoder_family_from_string(const std::string& s) {
  if (s == "bernoulli") return DecoderFamily::bernoulli;
  if (s == "gaussian") return DecoderFamily::gaussian;
  throw ConfigError("unknown decoder family '" + s + "' (expected bernoulli or gaussian)");
}

EncoderDecoder EncoderDecoder::create(const ModelDims& dims, Stream& rng) {
  if (dims.data_dim == 0 || dims.latent_dim == 0) throw ConfigError("model dimensions must be positive");
  std::vector<std::size_t> enc{dims.data_dim};
  enc.insert(enc.end(), dims.hidden.begin(), dims.hidden.end());
  enc.push_back(2 * dims.latent_dim);
  std::vector<std::size_t> dec{dims.latent_dim};
  dec.insert(dec.end(), dims.hidden.rbegin(), dims.hidden.rend());
  dec.push_back(decoder_width(dims));

  EncoderDecoder m;
  m.encoder = MlpParams::glorot(enc, Activation::tanh, Activation::identity, rng);
  m.decoder = MlpParams::glorot(dec, Activation::tanh, Activation::identity, rng);
  m.data_dim = dims.data_dim;
  m.latent_dim = dims.latent_dim;
  m.family = dims.decoder;
  return m;
}

void EncoderDecoder::register_params(FlatParamView& view, const std::string& prefix) {
  view.add(prefix + "encoder", encoder);
  view.add(prefix + "decoder", decoder);
}

MaskPosterior MaskPosterior::create(std::size_t queries, std::size_t latent_dim, double init_mean,
                                    double init_log_std) {
  return {Matrix(queries, latent_dim, init_mean), Matrix(queries, latent_dim, init_log_std)};
}

std::vector<double> MaskPosterior::posterior_mean_mask(std::size_t query) const {
  if (query >= queries()) throw ContractError("mask: unknown query index " + std::to_string(query));
  std::vector<double> m(latent_dim());
  for (std::size_t h = 0; h < m.size(); ++h) m[h] = sigmoid(mean(query, h));
  return m;
}

std::vector<double> MaskPosterior::sample_mask(std::size_t query, std::span<const double> eps) const {
  if (query >= queries()) throw ContractError("mask: unknown query index " + std::to_string(query));
  if (eps.size() != latent_dim()) throw ShapeError("mask: noise length does not match latent dimension");
  std::vector<double> m(latent_dim());
  for (std::size_t h = 0; h < m.size(); ++h) {
    m[h] = sigmoid(mean(query, h) + std::exp(clamp_log_std(log_std(query, h))) * eps[h]);
  }
  return m;
}

void MaskPosterior::register_params(FlatParamView& view, const std::string& prefix) {
  view.add(prefix + ".mean", mean);
  view.add(prefix + ".log_std", log_std);
}

ModelGradients ModelGradients::zeros_like(const EncoderDecoder& model, const MaskPosterior* masks) {
  ModelGradients g;
  g.model = model;
  g.model.encoder = model.encoder.zeros_like();
  g.model.decoder = model.decoder.zeros_like();
  if (masks) g.masks = MaskPosterior{Matrix(masks->queries(), masks->latent_dim()), Matrix(masks->queries(), masks->latent_dim())};
  return g;
}

DiagGaussian PosteriorBatch::row(std::size_t r) const {
  const auto m = mean.row(r);
  const auto s = log_std.row(r);
  return DiagGaussian({m.begin(), m.end()}, {s.begin(), s.end()});
}

PosteriorBatch encode_batch(const EncoderDecoder& model, const Matrix& x) { return run_encoder(model, x).posterior; }

std::vector<DiagGaussian> encode(const EncoderDecoder& model, const Matrix& x) {
  const PosteriorBatch post = encode_batch(model, x);
  std::vector<DiagGaussian> out;
  out.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out.push_back(post.row(r));
  return out;
}

Matrix decode_mean(const EncoderDecoder& model, const Matrix& z) {
  if (z.cols() != model.latent_dim) throw ShapeError("decode_mean: latent width does not match model");
  const Matrix out = mlp_apply(model.decoder, z);
  Matrix mean(z.rows(), model.data_dim);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t k = 0; k < model.data_dim; ++k) {
      mean(r, k) = model.family == DecoderFamily::bernoulli ? sigmoid(out(r, k)) : out(r, k);
    }
  }
  return mean;
}

std::vector<double> decode_loglik(const EncoderDecoder& model, const Matrix& z, const Matrix& x) {
  if (z.rows() != x.rows()) throw ShapeError("decode_loglik: z and x row counts differ");
  if (z.cols() != model.latent_dim || x.cols() != model.data_dim) {
    throw ShapeError("decode_loglik: z or x width does not match model");
  }
  const Matrix out = mlp_apply(model.decoder, z);
  std::vector<double> ll(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) ll[r] = row_loglik(model.family, out.row(r), x.row(r), {});
  return ll;
}

double triplet_distance(const DiagGaussian& qi, const DiagGaussian& qj, std::span<const double> mask) {
  const DivergenceVector d = sym_kl_per_dim(qi, qj);
  if (mask.empty()) return d.sum();
  return d.weighted_sum(mask);
}

double ber_loglik(double d_ij, double d_il) { return -softplus(d_ij - d_il); }

double tber_loglik(double d_ij, double d_il) { return d_ij <= d_il ? 0.0 : ber_loglik(d_ij, d_il); }

double triplet_loglik(const DiagGaussian& qi, const DiagGaussian& qj, const DiagGaussian& ql, Likelihood likelihood,
                      std::span<const double> mask) {
  if (qi.dim() != qj.dim() || qi.dim() != ql.dim()) throw ShapeError("triplet_loglik: posterior dimensions differ");
  const double dij = triplet_distance(qi, qj, mask);
  const double dil = triplet_distance(qi, ql, mask);
  return likelihood == Likelihood::ber ? ber_loglik(dij, dil) : tber_loglik(dij, dil);
}

ObjectiveTerms elbo_vae(const EncoderDecoder& model, const Matrix& x, std::span<const double> data_weight,
                        const Matrix& eps, const ObjectiveConfig& config, ModelGradients* grads) {
  const Encoded enc = run_encoder(model, x);
  Matrix upstream;
  if (grads) upstream = Matrix(x.rows(), 2 * model.latent_dim);
  ObjectiveTerms terms = data_term(model, x, data_weight, eps, config, enc.posterior, &upstream, grads);
  if (!std::isfinite(terms.elbo)) {
    throw NumericError("elbo_vae: non-finite objective (recon " + std::to_string(terms.recon) + ", kl " +
                       std::to_string(terms.kl) + ") on a batch of " + std::to_string(x.rows()) + " rows");
  }
  if (grads) finish_encoder(enc, upstream, *grads, model.latent_dim);
  return terms;
}

ObjectiveTerms elbo_opbn(const EncoderDecoder& model, const MaskPosterior* masks, const Matrix& x,
                         std::span<const double> data_weight, const TripletBatch& batch, const Matrix& eps,
                         const Matrix* mask_eps, const ObjectiveConfig& config, ModelGradients* grads) {
  const std::size_t h = model.latent_dim;
  if (config.masked) {
    if (masks == nullptr || mask_eps == nullptr) throw ContractError("elbo_opbn: masked objective needs masks and mask noise");
    if (masks->latent_dim() != h) throw ShapeError("elbo_opbn: mask width does not match latent dimension");
    if (mask_eps->rows() != masks->queries() || mask_eps->cols() != h) throw ShapeError("elbo_opbn: mask noise must be queries x H");
  }
  for (const auto& t : batch.triplets) {
    if (t.i >= x.rows() || t.j >= x.rows() || t.l >= x.rows()) {
      throw ContractError("elbo_opbn: dangling triplet index (batch has " + std::to_string(x.rows()) + " rows)");
    }
    if (config.masked && t.query >= masks->queries()) throw ContractError("elbo_opbn: triplet query has no mask");
  }

  const Encoded enc = run_encoder(model, x);
  const PosteriorBatch& post = enc.posterior;
  Matrix upstream;
  if (grads) upstream = Matrix(x.rows(), 2 * h);
  ObjectiveTerms terms = data_term(model, x, data_weight, eps, config, post, &upstream, grads);

  if (!batch.triplets.empty()) {
    // One mask sample per query, shared by all of that query's triplets.
    const std::size_t nq = config.masked ? masks->queries() : 0;
    Matrix mask(nq, h), mask_grad(nq, h);
    for (std::size_t q = 0; q < nq; ++q) {
      const auto m = masks->sample_mask(q, mask_eps->row(q));
      std::ranges::copy(m, mask.row(q).begin());
    }

    const double c = config.triplet_weight * batch.scale;
    std::vector<double> dij(h), dil(h);
    std::vector<SymKlGradient> gij(h), gil(h);
    for (const auto& t : batch.triplets) {
      double sum_ij = 0.0, sum_il = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double w = config.masked ? mask(t.query, k) : 1.0;
        dij[k] = sym_kl_univariate(post.mean(t.i, k), post.log_std(t.i, k), post.mean(t.j, k), post.log_std(t.j, k),
                                   &gij[k]);
        dil[k] = sym_kl_univariate(post.mean(t.i, k), post.log_std(t.i, k), post.mean(t.l, k), post.log_std(t.l, k),
                                   &gil[k]);
        sum_ij += w * dij[k];
        sum_il += w * dil[k];
      }
      const double u = sum_ij - sum_il;
      if (config.likelihood == Likelihood::tber && u <= 0.0) continue;  // plateau: log p = 0
      terms.triplet += c * -softplus(u);
      if (!grads) continue;
      const double g = -sigmoid(u) * c;  // d (c log p) / d u
      auto ui = upstream.row(t.i);
      auto uj = upstream.row(t.j);
      auto ul = upstream.row(t.l);
      for (std::size_t k = 0; k < h; ++k) {
        const double w = config.masked ? mask(t.query, k) : 1.0;
        const double a = g * w;
        ui[k] += a * (gij[k].mean_a - gil[k].mean_a);
        ui[h + k] += a * (gij[k].log_std_a - gil[k].log_std_a);
        uj[k] += a * gij[k].mean_b;
        uj[h + k] += a * gij[k].log_std_b;
        ul[k] -= a * gil[k].mean_b;
        ul[h + k] -= a * gil[k].log_std_b;
        if (config.masked) mask_grad(t.query, k) += g * (dij[k] - dil[k]);
      }
    }
    terms.elbo += terms.triplet;

    if (grads && config.masked) {
      for (std::size_t q = 0; q < nq; ++q) {
        for (std::size_t k = 0; k < h; ++k) {
          const double m = mask(q, k);
          const double db = mask_grad(q, k) * m * (1.0 - m);
          const double raw = masks->log_std(q, k);
          grads->masks.mean(q, k) += db;
          grads->masks.log_std(q, k) +=
              db * std::exp(clamp_log_std(raw)) * (*mask_eps)(q, k) * clamp_log_std_slope(raw);
        }
      }
    }
  }

  if (config.masked) {
    for (std::size_t q = 0; q < masks->queries(); ++q) {
      for (std::size_t k = 0; k < h; ++k) {
        const double m = masks->mean(q, k), raw = masks->log_std(q, k), s = clamp_log_std(raw);
        terms.mask_kl += 0.5 * (m * m + std::exp(2.0 * s) - 1.0 - 2.0 * s);
        if (grads) {
          grads->masks.mean(q, k) -= m;
          grads->masks.log_std(q, k) -= (std::exp(2.0 * s) - 1.0) * clamp_log_std_slope(raw);
        }
      }
    }
    terms.elbo -= terms.mask_kl;
  }

  if (!std::isfinite(terms.elbo)) {
    throw NumericError("elbo_opbn: non-finite objective (recon " + std::to_string(terms.recon) + ", kl " +
                       std::to_string(terms.kl) + ", triplet " + std::to_string(terms.triplet) + ") on a batch of " +
                       std::to_string(x.rows()) + " rows and " + std::to_string(batch.triplets.size()) + " triplets");
  }
  if (grads) finish_encoder(enc, upstream, *grads, h);
  return terms;
}

MlpParams create_embedder(std::size_t data_dim, std::span<const std::size_t> hidden, std::size_t embed_dim,
                          Stream& rng) {
  std::vector<std::size_t> dims{data_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(embed_dim);
  return MlpParams::glorot(dims, Activation::tanh, Activation::identity, rng);
}

double metricl_loss(const MlpParams& embedder, const Matrix& x, std::span<const Triplet> triplets, double scale,
                    MlpParams* grads) {
  for (const auto& t : triplets) {
    if (t.i >= x.rows() || t.j >= x.rows() || t.l >= x.rows()) throw ContractError("metricl_loss: dangling triplet index");
  }
  const MlpForward fwd = mlp_forward(embedder, x);
  const Matrix& e = fwd.output;
  const std::size_t h = e.cols();
  Matrix upstream;
  if (grads) upstream = Matrix(e.rows(), h);
  double loss = 0.0;
  for (const auto& t : triplets) {
    double dij = 0.0, dil = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      const double a = e(t.i, k) - e(t.j, k), b = e(t.i, k) - e(t.l, k);
      dij += a * a;
      dil += b * b;
    }
    const double u = dij - dil;
    loss += scale * softplus(u);
    if (!grads) continue;
    const double g = scale * sigmoid(u);
    for (std::size_t k = 0; k < h; ++k) {
      const double a = e(t.i, k) - e(t.j, k), b = e(t.i, k) - e(t.l, k);
      upstream(t.i, k) += g * 2.0 * (a - b);
      upstream(t.j, k) -= g * 2.0 * a;
      upstream(t.l, k) += g * 2.0 * b;
    }
  }
  if (!std::isfinite(loss)) throw NumericError("metricl_loss: non-finite loss");
  if (grads) mlp_backward_accumulate(fwd.tape, upstream, *grads);
  return loss;
}

}  // namespace opbn
