#include "opbn/oracle.hpp"

#include <charconv>
#include <cmath>

#include "opbn/csv.hpp"
#include "opbn/error.hpp"

namespace opbn {
namespace {

constexpr std::size_t kMaxAttemptsPerTriplet = 1'000'000;

std::optional<Triplet> order(bool j_closer, bool l_closer, std::uint32_t i, std::uint32_t j, std::uint32_t l) {
  if (j_closer == l_closer) return std::nullopt;
  if (j_closer) return Triplet{0, i, j, l};
  return Triplet{0, i, l, j};
}

void check_indices(std::span<const MetaRow> meta, std::uint32_t i, std::uint32_t j, std::uint32_t l) {
  if (i >= meta.size() || j >= meta.size() || l >= meta.size()) throw ContractError("oracle: index out of range");
}

double required(const MetaRow& row, const std::string& attribute) {
  const auto v = meta_value(row, attribute);
  if (!v) throw DataError("oracle: row " + std::to_string(row.id) + " has no '" + attribute + "' value");
  return *v;
}

std::uint32_t parse_index(const std::string& cell, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError(path.string() + ": bad triplet index '" + cell + "'");
  }
  return v;
}

}  // namespace

QueryId parse_query(const std::string& spec) {
  if (spec == "identity" || spec == "label") return QueryId::identity();
  if (spec == "trajectory") return QueryId::trajectory();
  std::string field = spec.starts_with("scalar:") ? spec.substr(7) : spec;
  if (field == "azimuth" || field == "elevation" || field == "angle") return QueryId::scalar(field);
  throw ConfigError("unknown query '" + spec + "' (expected identity, trajectory, azimuth, elevation or angle)");
}

std::string query_spec(const QueryId& q) { return q.name; }

std::optional<Triplet> answer_identity(std::span<const MetaRow> meta, std::uint32_t i, std::uint32_t j,
                                       std::uint32_t l) {
  check_indices(meta, i, j, l);
  const double li = required(meta[i], "label"), lj = required(meta[j], "label"), ll = required(meta[l], "label");
  return order(li == lj, li == ll, i, j, l);
}

std::optional<Triplet> answer_trajectory(std::span<const MetaRow> meta, std::uint32_t i, std::uint32_t j,
                                         std::uint32_t l) {
  check_indices(meta, i, j, l);
  const double ti = required(meta[i], "trajectory"), tj = required(meta[j], "trajectory"),
               tl = required(meta[l], "trajectory");
  return order(ti == tj, ti == tl, i, j, l);
}

std::optional<Triplet> answer_scalar(std::span<const MetaRow> meta, const std::string& attribute, std::uint32_t i,
                                     std::uint32_t j, std::uint32_t l) {
  check_indices(meta, i, j, l);
  const double ai = required(meta[i], attribute);
  const double dj = std::abs(ai - required(meta[j], attribute));
  const double dl = std::abs(ai - required(meta[l], attribute));
  if (dj == dl) return std::nullopt;
  return order(dj < dl, dl < dj, i, j, l);
}

std::optional<Triplet> answer(std::span<const MetaRow> meta, const QueryId& query, std::uint32_t query_index,
                              std::uint32_t i, std::uint32_t j, std::uint32_t l) {
  std::optional<Triplet> t;
  switch (query.kind) {
    case QueryKind::identity: t = answer_identity(meta, i, j, l); break;
    case QueryKind::trajectory: t = answer_trajectory(meta, i, j, l); break;
    case QueryKind::scalar: t = answer_scalar(meta, query.attribute, i, j, l); break;
  }
  if (t) t->query = query_index;
  return t;
}

std::vector<Triplet> sample_triplets(std::span<const MetaRow> meta, std::span<const QueryId> queries, std::size_t k,
                                     const OracleConfig& config, std::span<const std::size_t> pool) {
  if (k < 1) throw ContractError("sample_triplets: K must be at least 1");
  if (!(config.noise >= 0.0 && config.noise <= 1.0)) throw ContractError("sample_triplets: noise must lie in [0, 1]");
  std::vector<std::size_t> all;
  if (pool.empty()) {
    all.resize(meta.size());
    for (std::size_t r = 0; r < all.size(); ++r) all[r] = r;
    pool = all;
  }
  if (pool.size() < 3) throw ContractError("sample_triplets: need at least 3 datapoints");

  std::vector<Triplet> out;
  out.reserve(k * queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    Stream rng(config.seed, Purpose::oracle, q);
    const auto qi = std::uint32_t(q);
    std::size_t attempts = 0;
    for (std::size_t n = 0; n < k;) {
      if (++attempts > kMaxAttemptsPerTriplet) {
        throw DataError("sample_triplets: query '" + queries[q].name + "' produced only ties after " +
                        std::to_string(kMaxAttemptsPerTriplet) + " draws (is the attribute constant?)");
      }
      const auto i = std::uint32_t(pool[rng.below(pool.size())]);
      const auto j = std::uint32_t(pool[rng.below(pool.size())]);
      const auto l = std::uint32_t(pool[rng.below(pool.size())]);
      if (i == j || i == l || j == l) continue;
      auto t = answer(meta, queries[q], qi, i, j, l);
      if (!t) continue;
      if (config.stochastic && queries[q].kind == QueryKind::scalar) {
        // Answer (i,j,l) with probability exp(-dj/T) / (exp(-dj/T) + exp(-dl/T)).
        const double ai = required(meta[i], queries[q].attribute);
        const double dj = std::abs(ai - required(meta[t->j], queries[q].attribute));
        const double dl = std::abs(ai - required(meta[t->l], queries[q].attribute));
        const double p_keep = 1.0 / (1.0 + std::exp((dj - dl) / config.temperature));
        if (rng.uniform() >= p_keep) std::swap(t->j, t->l);
      }
      out.push_back(*t);
      ++n;
      attempts = 0;
    }
  }
  if (config.noise > 0.0) {
    Stream noise(config.seed, Purpose::noise);
    out = inject_noise(out, config.noise, noise);
  }
  return out;
}

std::vector<Triplet> inject_noise(std::span<const Triplet> triplets, double epsilon, Stream& rng,
                                  std::vector<bool>* flipped) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("inject_noise: epsilon must lie in [0, 1]");
  std::vector<Triplet> out(triplets.begin(), triplets.end());
  if (flipped) flipped->assign(out.size(), false);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (rng.uniform() < epsilon) {
      std::swap(out[k].j, out[k].l);
      if (flipped) (*flipped)[k] = true;
    }
  }
  return out;
}

void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets,
                    std::span<const QueryId> queries) {
  CsvWriter csv(path, {"query", "i", "j", "l"});
  for (const auto& t : triplets) {
    if (t.query >= queries.size()) throw ContractError("write_triplets: triplet references an unregistered query");
    csv.row({queries[t.query].name, std::to_string(t.i), std::to_string(t.j), std::to_string(t.l)});
  }
}

std::vector<Triplet> read_triplets(const std::filesystem::path& path, std::span<const QueryId> queries) {
  std::vector<Triplet> out;
  for (const auto& row : read_csv(path, {"query", "i", "j", "l"})) {
    std::optional<std::uint32_t> q;
    for (std::size_t k = 0; k < queries.size(); ++k) {
      if (queries[k].name == row[0]) q = std::uint32_t(k);
    }
    if (!q) throw DataError(path.string() + ": triplet references unregistered query '" + row[0] + "'");
    Triplet t{*q, parse_index(row[1], path), parse_index(row[2], path), parse_index(row[3], path)};
    if (t.i == t.j || t.i == t.l || t.j == t.l) throw DataError(path.string() + ": triplet with repeated index");
    out.push_back(t);
  }
  return out;
}

}  // namespace opbn
