#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opbn/matrix.hpp"
#include "opbn/model.hpp"
#include "opbn/optimizer.hpp"
#include "opbn/oracle.hpp"
#include "opbn/params.hpp"

namespace opbn {

enum class Variant { vae, opbn, opbn_masked, metricl };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_points = 100;    // N_b
  std::size_t batch_triplets = 100;  // K_b
  std::size_t mc_samples = 1;        // L
  std::size_t steps = 1000;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;        // 0: log only the first and last step
  std::size_t checkpoint_every = 0;    // 0: never
  Likelihood likelihood = Likelihood::ber;
  double triplet_weight = 1.0;  // beta_t

  void validate() const;
};

/// Rows of one minibatch and its triplets with batch-local indices.
///
/// `rows` lists dataset rows; the first `data_rows` of them are the uniform
/// datapoint sample that carries the data term, the rest are only encoded
/// because some triplet references them.
struct Minibatch {
  std::vector<std::size_t> rows;
  std::size_t data_rows = 0;
  std::vector<Triplet> triplets;  // i, j, l index into `rows`
};

/// Draws `batch_points` distinct rows of `pool` and `batch_triplets` distinct
/// triplets of `corpus` (both uniformly, without replacement, capped at the
/// available count) and joins them. Corpus indices are dataset rows.
Minibatch make_minibatch(std::span<const std::size_t> pool, std::span<const Triplet> corpus, std::size_t batch_points,
                         std::size_t batch_triplets, Stream& rng);

/// Every trainable array of one run. Only the parts used by the variant are populated.
struct TrainState {
  Variant variant = Variant::vae;
  EncoderDecoder model;
  MaskPosterior masks;
  MlpParams embedder;
  OptimizerState optimizer;
  std::uint64_t step = 0;

  static TrainState create(Variant variant, const ModelDims& dims, std::size_t queries, const TrainConfig& config);

  /// Parameters in optimizer order.
  FlatParamView params();
  [[nodiscard]] bool uses_masks() const { return variant == Variant::opbn_masked; }
};

struct MetricsRow {
  std::uint64_t step = 0;
  ObjectiveTerms terms;
};

struct TrainOptions {
  /// Where checkpoints go (`step_<n>` and, on failure, `last_good`). Empty disables them.
  std::filesystem::path checkpoint_dir;
  std::string config_hash;
  /// Called after every logged evaluation.
  std::function<void(const MetricsRow&)> on_log;
};

/// Objective of `state` on a fixed minibatch: ELBO terms for the generative
/// variants, and for MetricL the negated loss in `elbo` and `triplet`.
ObjectiveTerms evaluate_objective(const TrainState& state, const Matrix& x, std::size_t n_total,
                                  std::size_t k_total, const Minibatch& batch, const TrainConfig& config,
                                  std::uint64_t noise_step);

/// Runs optimizer steps from state.step until config.steps. `pool` lists the
/// rows available for training; corpus indices are dataset rows. Throws
/// NumericError on a non-finite objective after dumping `last_good`.
std::vector<MetricsRow> train(TrainState& state, const Matrix& x, std::span<const std::size_t> pool,
                              std::span<const Triplet> corpus, const TrainConfig& config,
                              const TrainOptions& options = {});

void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows);

struct CheckpointInfo {
  ModelDims dims;
  std::size_t queries = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointVersion = 1;

/// Directory with manifest.json and one little-endian float64 blob per array.
void save_checkpoint(const TrainState& state, const CheckpointInfo& info, const std::filesystem::path& dir);

/// Restores a checkpoint. Throws DataError on a missing, corrupt or
/// wrong-version checkpoint and ConfigError when `expected_hash` is given and differs.
TrainState load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr,
                           const std::optional<std::string>& expected_hash = std::nullopt);

}  // namespace opbn
