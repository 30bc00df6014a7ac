#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opbn/data.hpp"
#include "opbn/matrix.hpp"
#include "opbn/model.hpp"
#include "opbn/oracle.hpp"
#include "opbn/trainer.hpp"

namespace opbn {

// --- probes -----------------------------------------------------------------

enum class ProbeKind { logistic, ridge };

std::string to_string(ProbeKind k);

struct ProbeOptions {
  double ridge_lambda = 1e-3;
  double logistic_l2 = 1e-4;  // keeps separable problems bounded
  double learning_rate = 0.05;
  std::size_t max_steps = 5000;
  double grad_tolerance = 1e-5;
};

struct ProbeResult {
  ProbeKind kind = ProbeKind::logistic;
  /// Test classification error in percent (logistic) or test RMSD in target units (ridge).
  double metric = 0.0;
  std::size_t steps = 0;
  double final_grad_norm = 0.0;
  std::vector<int> classes;  // logistic only
};

/// Fits a probe on the `train` rows of `features` and scores it on the `test`
/// rows. Features are standardised with training statistics. Logistic probes
/// run full-batch Adam until the gradient norm drops below tolerance or
/// max_steps; ridge probes are solved in closed form. Throws DataError when
/// the training targets hold a single class, or when train and test overlap.
ProbeResult fit_probe(const Matrix& features, std::span<const double> target, std::span<const std::size_t> train,
                      std::span<const std::size_t> test, ProbeKind kind, const ProbeOptions& options = {});

// --- triplet prediction -----------------------------------------------------

/// Distance between rows a and b as seen by query q.
using PairDistance = std::function<double(std::uint32_t q, std::uint32_t a, std::uint32_t b)>;

/// Percentage of triplets whose ordering disagrees with `distance`; exact ties count one half.
double triplet_pred_error(std::span<const Triplet> triplets, const PairDistance& distance);

/// Symmetric-KL distance on posteriors, masked by each query's posterior-mean
/// mask when `masks` is given.
PairDistance posterior_distance(const PosteriorBatch& posteriors, const MaskPosterior* masks);

/// Squared Euclidean distance between embedding rows.
PairDistance embedding_distance(const Matrix& embeddings);

/// Posterior means (generative variants) or embeddings (MetricL) of every row of x.
Matrix latent_features(const TrainState& state, const Matrix& x);

/// Native distance of the variant: masked symmetric KL for opbn-masked,
/// unmasked symmetric KL for opbn and vae, Euclidean for metricl.
PairDistance native_distance(const TrainState& state, const Matrix& x);

// --- masks ------------------------------------------------------------------

struct MaskReport {
  std::vector<std::string> queries;
  Matrix values;  // queries x H posterior-mean masks
  double threshold = 0.2;
  std::vector<std::vector<std::size_t>> active;
  Matrix overlap;  // |A and B| / min(|A|, |B|); 0 when either set is empty
  Matrix cosine;
};

MaskReport mask_report(const MaskPosterior& masks, std::span<const std::string> query_names, double threshold = 0.2);
void write_mask_report(const MaskReport& report, const std::filesystem::path& dir);
void print_mask_report(const MaskReport& report, std::ostream& os);

// --- recombination and export ---------------------------------------------

/// Splices two posterior means and decodes the result: dimensions active for
/// `from_b` take B's mean, dimensions active only for `from_a` take A's, the
/// rest average the two. Returns expected pixel values. Throws ContractError
/// when the masks are still at their initial values.
std::vector<double> recombine_latents(const EncoderDecoder& model, const MaskPosterior& masks,
                                      std::span<const double> image_a, std::span<const double> image_b,
                                      std::size_t from_b, std::size_t from_a, double threshold = 0.2);

/// CSV `id,label,azimuth,elevation,trajectory,angle,z<h>...` with one column
/// per latent dimension, or per dimension above threshold when `mask` is given.
void export_embeddings(const std::filesystem::path& path, const Matrix& latents, std::span<const MetaRow> meta,
                       std::optional<std::span<const double>> mask = std::nullopt, double threshold = 0.2);

// --- report -----------------------------------------------------------------

/// One line of an evaluation report. NaN marks a metric that was not computed.
struct EvalRow {
  std::string model;
  std::string setting;
  double classification_error = 0.0;  // percent
  double azimuth_rmsd = 0.0;          // degrees
  double elevation_rmsd = 0.0;        // degrees
  double triplet_error = 0.0;         // percent
  std::string config_hash;
  std::uint64_t seed = 0;
};

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows);
void print_eval_report(std::span<const EvalRow> rows, std::ostream& os);

}  // namespace opbn
