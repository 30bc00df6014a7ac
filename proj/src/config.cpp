#include "opbn/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "opbn/error.hpp"

namespace opbn {
namespace {

using nlohmann::json;

std::string type_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return v.type_name();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return type_name(a) == type_name(b);
}

void merge(json& into, const json& from, const std::string& origin) {
  if (!from.is_object()) throw ConfigError(origin + ": config must be a JSON object with flat dotted keys");
  for (const auto& [key, value] : from.items()) {
    if (!into.contains(key)) throw ConfigError("unknown config key '" + key + "' (" + origin + ")");
    if (!same_kind(into[key], value)) {
      throw ConfigError("config key '" + key + "' expects a " + type_name(into[key]) + ", got " + type_name(value) +
                        " (" + origin + ")");
    }
    into[key] = value;
  }
}

double number(const json& c, const std::string& key) { return c.at(key).get<double>(); }

std::size_t count(const json& c, const std::string& key, std::size_t min) {
  const double v = number(c, key);
  if (v != std::floor(v) || v < double(min)) {
    throw ConfigError("config key '" + key + "' must be an integer >= " + std::to_string(min));
  }
  return static_cast<std::size_t>(v);
}

double in_range(const json& c, const std::string& key, double lo, double hi) {
  const double v = number(c, key);
  if (!(v >= lo && v <= hi)) {
    throw ConfigError("config key '" + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return v;
}

double positive(const json& c, const std::string& key) {
  const double v = number(c, key);
  if (!(v > 0.0)) throw ConfigError("config key '" + key + "' must be > 0");
  return v;
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

json default_config() {
  return {
      {"seed", 0},
      {"dataset.kind", "twofactor"},
      {"dataset.n", 3000},
      {"dataset.side", 16},
      {"dataset.test_fraction", 0.2},
      {"dataset.mnist_images", "data/mnist/images-idx3-ubyte.gz"},
      {"dataset.mnist_labels", "data/mnist/labels-idx1-ubyte.gz"},
      {"dataset.per_class", 34},
      {"dataset.angles", kDefaultRotationAngles},
      {"dataset.yale_dir", ""},
      {"dataset.bundle_dir", ""},
      {"oracle.queries", json::array({"identity", "azimuth"})},
      {"oracle.k", 10000},
      {"oracle.heldout_k", 2000},
      {"oracle.noise", 0.0},
      {"oracle.stochastic", false},
      {"oracle.temperature", 10.0},
      {"model.variant", "opbn-masked"},
      {"model.likelihood", "ber"},
      {"model.latent_dim", 10},
      {"model.hidden", json::array({128})},
      {"model.decoder", "bernoulli"},
      {"model.triplet_weight", 1.0},
      {"train.batch_points", 100},
      {"train.batch_triplets", 100},
      {"train.mc_samples", 1},
      {"train.steps", 3000},
      {"train.optimizer", "adam"},
      {"train.lr", 1e-3},
      {"train.beta1", 0.9},
      {"train.beta2", 0.999},
      {"train.decay", 0.9},
      {"train.momentum", 0.9},
      {"train.epsilon", 0.0},
      {"train.clip_norm", 100.0},
      {"train.eval_every", 100},
      {"train.checkpoint_every", 0},
      {"eval.mask_threshold", 0.2},
      {"eval.probe_steps", 5000},
      {"eval.recombine_pairs", 10},
      {"eval.sample_count", 16},
  };
}

RunConfig resolve_config(const json& c) {
  RunConfig r;
  r.resolved = c;
  r.seed = static_cast<std::uint64_t>(count(c, "seed", 0));

  auto& d = r.dataset;
  const auto kind = c.at("dataset.kind").get<std::string>();
  if (kind == "twofactor") {
    d.kind = DatasetKind::twofactor;
  } else if (kind == "mnist") {
    d.kind = DatasetKind::mnist;
  } else if (kind == "yale") {
    d.kind = DatasetKind::yale;
  } else if (kind == "bundle") {
    d.kind = DatasetKind::bundle;
  } else {
    throw ConfigError("config key 'dataset.kind' must be one of twofactor, mnist, yale, bundle");
  }
  d.n = count(c, "dataset.n", 10);
  d.side = count(c, "dataset.side", 4);
  d.test_fraction = in_range(c, "dataset.test_fraction", 0.0, 0.9);
  d.mnist_images = c.at("dataset.mnist_images").get<std::string>();
  d.mnist_labels = c.at("dataset.mnist_labels").get<std::string>();
  d.per_class = count(c, "dataset.per_class", 1);
  d.angles = wrap("dataset.angles", [&] {
    try {
      return c.at("dataset.angles").get<std::vector<double>>();
    } catch (const json::exception&) {
      throw ConfigError("must be an array of numbers");
    }
  });
  for (std::size_t k = 0; k < d.angles.size(); ++k) {
    if (!(d.angles[k] > 0.0) || (k > 0 && !(d.angles[k] > d.angles[k - 1]))) {
      throw ConfigError("config key 'dataset.angles' must be positive and strictly increasing");
    }
  }
  d.yale_dir = c.at("dataset.yale_dir").get<std::string>();
  d.bundle_dir = c.at("dataset.bundle_dir").get<std::string>();
  if (d.kind == DatasetKind::yale && d.yale_dir.empty()) throw ConfigError("config key 'dataset.yale_dir' is required for yale");
  if (d.kind == DatasetKind::bundle && d.bundle_dir.empty()) {
    throw ConfigError("config key 'dataset.bundle_dir' is required for bundle");
  }

  auto& o = r.oracle;
  const json& queries = c.at("oracle.queries");
  if (queries.empty()) throw ConfigError("config key 'oracle.queries' must list at least one query");
  for (const auto& q : queries) {
    if (!q.is_string()) throw ConfigError("config key 'oracle.queries' must be an array of strings");
    o.queries.push_back(wrap("oracle.queries", [&] { return parse_query(q.get<std::string>()); }));
  }
  o.k = count(c, "oracle.k", 1);
  o.heldout_k = count(c, "oracle.heldout_k", 0);
  o.noise = in_range(c, "oracle.noise", 0.0, 1.0);
  o.stochastic = c.at("oracle.stochastic").get<bool>();
  o.temperature = positive(c, "oracle.temperature");

  auto& m = r.model;
  m.variant = wrap("model.variant", [&] { return variant_from_string(c.at("model.variant").get<std::string>()); });
  r.train.likelihood =
      wrap("model.likelihood", [&] { return likelihood_from_string(c.at("model.likelihood").get<std::string>()); });
  m.dims.latent_dim = count(c, "model.latent_dim", 1);
  for (const auto& h : c.at("model.hidden")) {
    if (!h.is_number_integer() || h.get<long long>() < 1) {
      throw ConfigError("config key 'model.hidden' must be an array of positive integers");
    }
    m.dims.hidden.push_back(h.get<std::size_t>());
  }
  m.dims.decoder =
      wrap("model.decoder", [&] { return decoder_family_from_string(c.at("model.decoder").get<std::string>()); });
  r.train.triplet_weight = number(c, "model.triplet_weight");
  if (!(r.train.triplet_weight >= 0.0)) throw ConfigError("config key 'model.triplet_weight' must be >= 0");

  auto& t = r.train;
  t.seed = r.seed;
  t.batch_points = count(c, "train.batch_points", 1);
  t.batch_triplets = count(c, "train.batch_triplets", 0);
  t.mc_samples = count(c, "train.mc_samples", 1);
  t.steps = count(c, "train.steps", 0);
  t.optimizer.kind =
      wrap("train.optimizer", [&] { return optimizer_kind_from_string(c.at("train.optimizer").get<std::string>()); });
  t.optimizer.learning_rate = positive(c, "train.lr");
  t.optimizer.beta1 = in_range(c, "train.beta1", 0.0, 0.999999);
  t.optimizer.beta2 = in_range(c, "train.beta2", 0.0, 0.999999999);
  t.optimizer.decay = in_range(c, "train.decay", 0.0, 0.999999);
  t.optimizer.momentum = in_range(c, "train.momentum", 0.0, 0.999999);
  const double eps = number(c, "train.epsilon");
  if (eps < 0.0) throw ConfigError("config key 'train.epsilon' must be >= 0 (0 selects the optimizer default)");
  if (eps > 0.0) t.optimizer.epsilon = eps;
  t.optimizer.clip_norm = number(c, "train.clip_norm");
  if (t.optimizer.clip_norm < 0.0) throw ConfigError("config key 'train.clip_norm' must be >= 0");
  t.eval_every = count(c, "train.eval_every", 0);
  t.checkpoint_every = count(c, "train.checkpoint_every", 0);
  if (m.variant == Variant::metricl && t.batch_triplets == 0) {
    throw ConfigError("config key 'train.batch_triplets' must be >= 1 for metricl");
  }

  auto& e = r.eval;
  e.mask_threshold = in_range(c, "eval.mask_threshold", 0.0, 1.0);
  e.probe_steps = count(c, "eval.probe_steps", 1);
  e.recombine_pairs = count(c, "eval.recombine_pairs", 1);
  e.sample_count = count(c, "eval.sample_count", 1);
  return r;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                       std::optional<std::uint64_t> seed) {
  json c = default_config();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw ConfigError("cannot read config file " + file->string());
    json from;
    try {
      from = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    merge(c, from, file->string());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    merge(c, json{{key, value}}, "--set");
  }
  if (seed) c["seed"] = *seed;
  return resolve_config(c);
}

std::string RunConfig::config_hash() const {
  json keyed = json::object();
  for (const auto& [key, value] : resolved.items()) {
    if (key.rfind("eval.", 0) != 0) keyed[key] = value;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(keyed.dump())));
  return buf;
}

std::vector<std::string> RunConfig::query_names() const {
  std::vector<std::string> names;
  for (const auto& q : oracle.queries) names.push_back(q.name);
  return names;
}

}  // namespace opbn
