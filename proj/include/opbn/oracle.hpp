#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opbn/data.hpp"
#include "opbn/rng.hpp"

namespace opbn {

enum class QueryKind {
  identity,    // same label
  scalar,      // closer value of a numeric attribute
  trajectory,  // same trajectory id
};

/// A question put to the oracle.
struct QueryId {
  std::string name;
  QueryKind kind = QueryKind::identity;
  std::string attribute;  // metadata field read by scalar queries

  static QueryId identity(std::string name = "identity") { return {std::move(name), QueryKind::identity, "label"}; }
  static QueryId scalar(std::string attribute) { return {attribute, QueryKind::scalar, attribute}; }
  static QueryId trajectory(std::string name = "trajectory") {
    return {std::move(name), QueryKind::trajectory, "trajectory"};
  }

  friend bool operator==(const QueryId&, const QueryId&) = default;
};

/// Parses "identity", "trajectory" or "scalar:<field>" (bare field names
/// "azimuth", "elevation", "angle" are accepted as scalar queries).
QueryId parse_query(const std::string& spec);
std::string query_spec(const QueryId& q);

/// Oracle answer: j is more similar to i than l is, under query `query`
/// (an index into the registered query list).
struct Triplet {
  std::uint32_t query = 0;
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  std::uint32_t l = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct OracleConfig {
  double noise = 0.0;  // probability of flipping each answer
  std::uint64_t seed = 0;
  /// Scalar queries answer (i,j,l) with probability softmax(-|delta| / temperature)
  /// instead of deterministically.
  bool stochastic = false;
  double temperature = 10.0;
};

/// (i,j,l) if label(i)=label(j)!=label(l), (i,l,j) in the mirrored case,
/// nothing (a tie) when both or neither match.
std::optional<Triplet> answer_identity(std::span<const MetaRow> meta, std::uint32_t i, std::uint32_t j, std::uint32_t l);

/// (i,j,l) iff |a_i - a_j| < |a_i - a_l|; tie on equality.
std::optional<Triplet> answer_scalar(std::span<const MetaRow> meta, const std::string& attribute, std::uint32_t i,
                                     std::uint32_t j, std::uint32_t l);

std::optional<Triplet> answer_trajectory(std::span<const MetaRow> meta, std::uint32_t i, std::uint32_t j,
                                         std::uint32_t l);

/// Deterministic answer for any query kind; `query_index` is stored in the result.
std::optional<Triplet> answer(std::span<const MetaRow> meta, const QueryId& query, std::uint32_t query_index,
                              std::uint32_t i, std::uint32_t j, std::uint32_t l);

/// K triplets per query over distinct indices drawn uniformly from `pool`
/// (all rows when empty). Ties are resampled; flips are applied per `config.noise`.
std::vector<Triplet> sample_triplets(std::span<const MetaRow> meta, std::span<const QueryId> queries, std::size_t k,
                                     const OracleConfig& config, std::span<const std::size_t> pool = {});

/// Independently swaps (j, l) of each triplet with probability `epsilon`.
std::vector<Triplet> inject_noise(std::span<const Triplet> triplets, double epsilon, Stream& rng,
                                  std::vector<bool>* flipped = nullptr);

/// Triplet file: header `query,i,j,l`, query as its symbolic name, 0-based indices.
void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets,
                    std::span<const QueryId> queries);
std::vector<Triplet> read_triplets(const std::filesystem::path& path, std::span<const QueryId> queries);

}  // namespace opbn
