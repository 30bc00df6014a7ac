#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opbn/distributions.hpp"
#include "opbn/matrix.hpp"
#include "opbn/mlp.hpp"
#include "opbn/oracle.hpp"
#include "opbn/params.hpp"
#include "opbn/rng.hpp"

namespace opbn {

enum class Likelihood { ber, tber };
enum class DecoderFamily { bernoulli, gaussian };

std::string to_string(Likelihood l);
std::string to_string(DecoderFamily f);
Likelihood likelihood_from_string(const std::string& s);
DecoderFamily decoder_family_from_string(const std::string& s);

struct ModelDims {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 0;
  std::vector<std::size_t> hidden;  // encoder widths; the decoder mirrors them
  DecoderFamily decoder = DecoderFamily::bernoulli;
};

/// Inference network x -> (mean, raw log_std) and generative network
/// z -> per-pixel likelihood parameters (logits for Bernoulli, mean and
/// log-sigma for Gaussian).
struct EncoderDecoder {
  MlpParams encoder;
  MlpParams decoder;
  std::size_t data_dim = 0;
  std::size_t latent_dim = 0;
  DecoderFamily family = DecoderFamily::bernoulli;

  static EncoderDecoder create(const ModelDims& dims, Stream& rng);

  void register_params(FlatParamView& view, const std::string& prefix = "");

  friend bool operator==(const EncoderDecoder&, const EncoderDecoder&) = default;
};

/// Per-query Gaussian posteriors over pre-sigmoid mask logits b; the mask is
/// m = sigmoid(b) with prior b ~ N(0, 1).
struct MaskPosterior {
  Matrix mean;     // queries x H
  Matrix log_std;  // queries x H, clamped like any log_std when used

  static MaskPosterior create(std::size_t queries, std::size_t latent_dim, double init_mean = 0.0,
                              double init_log_std = -2.0);

  [[nodiscard]] std::size_t queries() const { return mean.rows(); }
  [[nodiscard]] std::size_t latent_dim() const { return mean.cols(); }
  /// sigmoid(mean) for one query, used at evaluation time.
  [[nodiscard]] std::vector<double> posterior_mean_mask(std::size_t query) const;
  /// sigmoid(mean + exp(log_std) * eps).
  [[nodiscard]] std::vector<double> sample_mask(std::size_t query, std::span<const double> eps) const;

  void register_params(FlatParamView& view, const std::string& prefix = "mask");

  friend bool operator==(const MaskPosterior&, const MaskPosterior&) = default;
};

struct ObjectiveConfig {
  Likelihood likelihood = Likelihood::ber;
  bool masked = false;
  std::size_t mc_samples = 1;  // L
  double triplet_weight = 1.0;
};

/// Objective components; elbo = recon - kl + triplet - mask_kl, each already scaled.
struct ObjectiveTerms {
  double elbo = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double triplet = 0.0;
  double mask_kl = 0.0;
};

/// Gradients of the ELBO (ascent direction) with the parameter layout of the model.
struct ModelGradients {
  EncoderDecoder model;
  MaskPosterior masks;

  static ModelGradients zeros_like(const EncoderDecoder& model, const MaskPosterior* masks);
};

/// Per-row posterior means and clamped log_stds.
struct PosteriorBatch {
  Matrix mean;     // B x H
  Matrix log_std;  // B x H, clamped
  Matrix raw_log_std;

  [[nodiscard]] DiagGaussian row(std::size_t r) const;
};

PosteriorBatch encode_batch(const EncoderDecoder& model, const Matrix& x);
std::vector<DiagGaussian> encode(const EncoderDecoder& model, const Matrix& x);

/// Expected pixel values given z: sigmoid(logits) or the Gaussian mean.
Matrix decode_mean(const EncoderDecoder& model, const Matrix& z);

/// log p(x_r | z_r) for every row.
std::vector<double> decode_loglik(const EncoderDecoder& model, const Matrix& z, const Matrix& x);

/// sum_h m_h D^h(qi, qj); all-ones mask when `mask` is empty.
double triplet_distance(const DiagGaussian& qi, const DiagGaussian& qj, std::span<const double> mask = {});

/// log Ber(t) = -log(1 + exp(d_ij - d_il)).
double ber_loglik(double d_ij, double d_il);
/// 0 when Ber(t) >= 0.5, otherwise ber_loglik.
double tber_loglik(double d_ij, double d_il);

double triplet_loglik(const DiagGaussian& qi, const DiagGaussian& qj, const DiagGaussian& ql, Likelihood likelihood,
                      std::span<const double> mask = {});

/// Data part of the objective:
///   sum_r w_r [ -KL(q(z_r) || N(0,1)) + (1/L) sum_l log p(x_r | z_r^l) ].
/// `eps` holds L noise rows per batch row (row r * L + l). Rows with zero
/// weight are skipped. Adds ELBO gradients into `grads` when given.
ObjectiveTerms elbo_vae(const EncoderDecoder& model, const Matrix& x, std::span<const double> data_weight,
                        const Matrix& eps, const ObjectiveConfig& config, ModelGradients* grads = nullptr);

struct TripletBatch {
  std::span<const Triplet> triplets;  // indices local to the encoded batch
  double scale = 1.0;                  // K / K_b
};

/// Joint objective: elbo_vae terms plus
///   triplet_weight * scale * sum_k log p(t_k)
/// with distances on the posteriors, and, when masked, one mask sample per
/// query (`mask_eps`, queries x H) minus sum_Q KL(q(b^Q) || N(0, 1)).
ObjectiveTerms elbo_opbn(const EncoderDecoder& model, const MaskPosterior* masks, const Matrix& x,
                         std::span<const double> data_weight, const TripletBatch& triplets, const Matrix& eps,
                         const Matrix* mask_eps, const ObjectiveConfig& config, ModelGradients* grads = nullptr);

/// Deterministic embedding network for the metric-learning baseline.
MlpParams create_embedder(std::size_t data_dim, std::span<const std::size_t> hidden, std::size_t embed_dim,
                          Stream& rng);

/// scale * sum_k -log[e^{-d_ij} / (e^{-d_ij} + e^{-d_il})] with squared
/// Euclidean d between embeddings. Adds loss gradients into `grads` when given.
double metricl_loss(const MlpParams& embedder, const Matrix& x, std::span<const Triplet> triplets, double scale = 1.0,
                    MlpParams* grads = nullptr);

}  // namespace opbn
