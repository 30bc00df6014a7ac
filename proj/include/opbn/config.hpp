#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "opbn/data.hpp"
#include "opbn/model.hpp"
#include "opbn/oracle.hpp"
#include "opbn/trainer.hpp"

namespace opbn {

enum class DatasetKind { twofactor, mnist, yale, bundle };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::twofactor;
  std::size_t n = 3000;
  std::size_t side = 16;
  double test_fraction = 0.2;
  std::filesystem::path mnist_images;
  std::filesystem::path mnist_labels;
  std::size_t per_class = 34;
  std::vector<double> angles = kDefaultRotationAngles;
  std::filesystem::path yale_dir;
  std::filesystem::path bundle_dir;
};

struct OracleSpec {
  std::vector<QueryId> queries;
  std::size_t k = 10000;          // training triplets per query
  std::size_t heldout_k = 2000;   // held-out triplets per query, on test rows
  double noise = 0.0;
  bool stochastic = false;
  double temperature = 10.0;
};

struct ModelSpec {
  Variant variant = Variant::opbn_masked;
  ModelDims dims;  // data_dim is filled from the bundle
};

struct EvalSpec {
  double mask_threshold = 0.2;
  std::size_t probe_steps = 5000;
  std::size_t recombine_pairs = 10;
  std::size_t sample_count = 16;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  OracleSpec oracle;
  ModelSpec model;
  TrainConfig train;
  EvalSpec eval;
  nlohmann::json resolved;  // every key with its final value

  /// Hash of everything that determines a trained model (dataset, oracle,
  /// model, train and seed keys), as 16 hex digits.
  [[nodiscard]] std::string config_hash() const;
  [[nodiscard]] std::vector<std::string> query_names() const;
};

/// Every key with its default value.
nlohmann::json default_config();

/// Defaults, then `file` (if given), then `overrides` ("key=value", value
/// parsed as JSON when possible, else taken as a string), then `seed`.
/// Unknown keys and invalid values throw ConfigError naming the key.
RunConfig parse_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides = {},
                       std::optional<std::uint64_t> seed = std::nullopt);

/// Builds a RunConfig from a flat key/value object (already merged with defaults).
RunConfig resolve_config(const nlohmann::json& flat);

}  // namespace opbn
