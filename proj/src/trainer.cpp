#include "opbn/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "opbn/csv.hpp"
#include "opbn/error.hpp"

namespace opbn {
namespace {

using nlohmann::json;

// Partial Fisher-Yates: the first `count` entries of a shuffled 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, Stream& rng) {
  count = std::min(count, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < count; ++k) std::swap(idx[k], idx[k + rng.below(n - k)]);
  idx.resize(count);
  return idx;
}

ObjectiveConfig objective_config(const TrainState& state, const TrainConfig& config) {
  return {config.likelihood, state.variant == Variant::opbn_masked, config.mc_samples, config.triplet_weight};
}

// Noise for dataset row `row` at `step` does not depend on which batch the row landed in.
Matrix reparam_noise(const TrainConfig& config, std::uint64_t step, std::span<const std::size_t> rows, std::size_t h) {
  const std::size_t l_count = config.mc_samples;
  Matrix eps(rows.size() * l_count, h);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Stream rng(config.seed, Purpose::reparam, step, rows[r]);
    for (std::size_t s = 0; s < l_count; ++s) {
      for (double& v : eps.row(r * l_count + s)) v = rng.normal();
    }
  }
  return eps;
}

Matrix mask_noise(const TrainConfig& config, std::uint64_t step, std::size_t queries, std::size_t h) {
  Stream rng(config.seed, Purpose::mask, step);
  Matrix eps(queries, h);
  for (double& v : eps.values()) v = rng.normal();
  return eps;
}

TrainState zeros_like(const TrainState& s) {
  TrainState g;
  g.variant = s.variant;
  g.model = s.model;
  g.model.encoder = s.model.encoder.zeros_like();
  g.model.decoder = s.model.decoder.zeros_like();
  g.masks = MaskPosterior{Matrix(s.masks.queries(), s.masks.latent_dim()), Matrix(s.masks.queries(), s.masks.latent_dim())};
  g.embedder = s.embedder.zeros_like();
  return g;
}

// Objective terms and, when `grads` is given, gradients of the quantity being
// minimised (negative ELBO, or the MetricL loss).
ObjectiveTerms objective(const TrainState& state, const Matrix& x, std::size_t n_total, std::size_t k_total,
                         const Minibatch& batch, const TrainConfig& config, std::uint64_t noise_step,
                         TrainState* grads) {
  const Matrix xb = gather_rows(x, batch.rows);
  const double triplet_scale = batch.triplets.empty() ? 0.0 : double(k_total) / double(batch.triplets.size());

  if (state.variant == Variant::metricl) {
    const double loss = metricl_loss(state.embedder, xb, batch.triplets, triplet_scale, grads ? &grads->embedder : nullptr);
    ObjectiveTerms t;
    t.elbo = -loss;
    t.triplet = -loss;
    return t;
  }

  std::vector<double> weight(batch.rows.size(), 0.0);
  if (batch.data_rows > 0) {
    std::fill_n(weight.begin(), batch.data_rows, double(n_total) / double(batch.data_rows));
  }
  const std::size_t h = state.model.latent_dim;
  const Matrix eps = reparam_noise(config, noise_step, batch.rows, h);
  const ObjectiveConfig cfg = objective_config(state, config);

  std::optional<ModelGradients> g;
  if (grads) g = ModelGradients::zeros_like(state.model, state.uses_masks() ? &state.masks : nullptr);
  ObjectiveTerms terms;
  if (state.variant == Variant::vae) {
    terms = elbo_vae(state.model, xb, weight, eps, cfg, g ? &*g : nullptr);
  } else {
    const Matrix meps = state.uses_masks() ? mask_noise(config, noise_step, state.masks.queries(), h) : Matrix();
    terms = elbo_opbn(state.model, state.uses_masks() ? &state.masks : nullptr, xb, weight,
                      {batch.triplets, triplet_scale}, eps, state.uses_masks() ? &meps : nullptr, cfg,
                      g ? &*g : nullptr);
  }
  if (grads) {
    // Ascent gradients of the ELBO; flip them for the minimiser.
    grads->model = std::move(g->model);
    if (state.uses_masks()) grads->masks = std::move(g->masks);
    FlatParamView view = grads->params();
    for (const auto& e : view.entries()) {
      for (double& v : e.values) v = -v;
    }
  }
  return terms;
}

void write_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto bits = std::bit_cast<std::uint64_t>(values[k]);
    for (int b = 0; b < 8; ++b) bytes[k * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

std::vector<double> read_blob(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: missing array file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected * 8) {
    throw DataError("checkpoint: " + path.filename().string() + " holds " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(expected * 8));
  }
  std::vector<double> values(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[k * 8 + b]) << (8 * b);
    values[k] = std::bit_cast<double>(bits);
  }
  return values;
}

std::string blob_name(const std::string& array) {
  std::string s = array;
  std::replace(s.begin(), s.end(), '/', '_');
  return s + ".f64";
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vae: return "vae";
    case Variant::opbn: return "opbn";
    case Variant::opbn_masked: return "opbn-masked";
    case Variant::metricl: return "metricl";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "vae") return Variant::vae;
  if (s == "opbn") return Variant::opbn;
  if (s == "opbn-masked") return Variant::opbn_masked;
  if (s == "metricl") return Variant::metricl;
  throw ConfigError("unknown variant '" + s + "' (expected vae, opbn, opbn-masked or metricl)");
}

void TrainConfig::validate() const {
  if (batch_points < 1) throw ConfigError("train.batch_points must be >= 1");
  if (mc_samples < 1) throw ConfigError("train.mc_samples must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(triplet_weight >= 0.0)) throw ConfigError("model.triplet_weight must be >= 0");
}

Minibatch make_minibatch(std::span<const std::size_t> pool, std::span<const Triplet> corpus, std::size_t batch_points,
                         std::size_t batch_triplets, Stream& rng) {
  Minibatch mb;
  std::unordered_map<std::size_t, std::uint32_t> local;
  auto add_row = [&](std::size_t row) {
    const auto [it, inserted] = local.try_emplace(row, static_cast<std::uint32_t>(mb.rows.size()));
    if (inserted) mb.rows.push_back(row);
    return it->second;
  };
  for (std::size_t k : draw_without_replacement(pool.size(), batch_points, rng)) add_row(pool[k]);
  mb.data_rows = mb.rows.size();
  if (batch_triplets > 0) {
    if (corpus.empty()) throw ContractError("make_minibatch: triplet batch requested from an empty corpus");
    for (std::size_t k : draw_without_replacement(corpus.size(), batch_triplets, rng)) {
      const Triplet& t = corpus[k];
      mb.triplets.push_back({t.query, add_row(t.i), add_row(t.j), add_row(t.l)});
    }
  }
  return mb;
}

TrainState TrainState::create(Variant variant, const ModelDims& dims, std::size_t queries, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.variant = variant;
  Stream rng(config.seed, Purpose::init);
  if (variant == Variant::metricl) {
    s.embedder = create_embedder(dims.data_dim, dims.hidden, dims.latent_dim, rng);
  } else {
    s.model = EncoderDecoder::create(dims, rng);
  }
  if (variant == Variant::opbn_masked) {
    if (queries == 0) throw ConfigError("opbn-masked needs at least one query");
    s.masks = MaskPosterior::create(queries, dims.latent_dim);
  }
  s.optimizer = OptimizerState::create(config.optimizer, s.params().size());
  return s;
}

FlatParamView TrainState::params() {
  FlatParamView view;
  if (variant == Variant::metricl) {
    view.add("embedder", embedder);
  } else {
    model.register_params(view);
    if (uses_masks()) masks.register_params(view);
  }
  return view;
}

ObjectiveTerms evaluate_objective(const TrainState& state, const Matrix& x, std::size_t n_total, std::size_t k_total,
                                  const Minibatch& batch, const TrainConfig& config, std::uint64_t noise_step) {
  return objective(state, x, n_total, k_total, batch, config, noise_step, nullptr);
}

std::vector<MetricsRow> train(TrainState& state, const Matrix& x, std::span<const std::size_t> pool,
                              std::span<const Triplet> corpus, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (pool.empty()) throw ContractError("train: no training rows");
  for (std::size_t r : pool) {
    if (r >= x.rows()) throw ContractError("train: pool row out of range");
  }
  for (const auto& t : corpus) {
    if (t.i >= x.rows() || t.j >= x.rows() || t.l >= x.rows()) throw ContractError("train: triplet row out of range");
  }
  const bool uses_triplets = state.variant != Variant::vae;
  if (state.variant != Variant::vae && corpus.empty()) {
    throw ContractError("train: variant " + to_string(state.variant) + " needs a triplet corpus");
  }
  const std::size_t k_b = uses_triplets ? config.batch_triplets : 0;
  const std::size_t n_b = state.variant == Variant::metricl ? 0 : config.batch_points;
  if (state.variant == Variant::metricl && k_b == 0) throw ConfigError("train.batch_triplets must be >= 1 for metricl");

  Stream eval_rng(config.seed, Purpose::eval);
  const Minibatch eval_batch = make_minibatch(pool, corpus, n_b, k_b, eval_rng);

  std::vector<MetricsRow> log;
  auto record = [&] {
    MetricsRow row{state.step, evaluate_objective(state, x, pool.size(), corpus.size(), eval_batch, config, 0)};
    log.push_back(row);
    if (options.on_log) options.on_log(row);
  };
  const CheckpointInfo info{{}, state.masks.queries(), options.config_hash, config.seed};

  if (state.step >= config.steps) {
    record();
    return log;
  }
  if (config.eval_every == 0 || state.step % config.eval_every == 0) record();

  FlatParamView params = state.params();
  TrainState grads = zeros_like(state);
  while (state.step < config.steps) {
    const std::vector<double> snapshot = params.flatten();
    try {
      Stream rng(config.seed, Purpose::batch, state.step);
      const Minibatch mb = make_minibatch(pool, corpus, n_b, k_b, rng);
      grads = zeros_like(state);
      objective(state, x, pool.size(), corpus.size(), mb, config, state.step + 1, &grads);
      FlatParamView gview = grads.params();
      optimizer_step(state.optimizer, params, gview);
      if (!all_finite(params.flatten())) throw NumericError("train: parameters became non-finite at step " + std::to_string(state.step));
    } catch (const NumericError& e) {
      params.unflatten(snapshot);
      if (!options.checkpoint_dir.empty()) save_checkpoint(state, info, options.checkpoint_dir / "last_good");
      throw NumericError(std::string(e.what()) + " (step " + std::to_string(state.step) + ", last good parameters " +
                         (options.checkpoint_dir.empty() ? std::string("not saved") : "saved to " + (options.checkpoint_dir / "last_good").string()) + ")");
    }
    ++state.step;
    const bool last = state.step == config.steps;
    if (last || (config.eval_every > 0 && state.step % config.eval_every == 0)) record();
    if (!options.checkpoint_dir.empty() && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_checkpoint(state, info, options.checkpoint_dir / ("step_" + std::to_string(state.step)));
    }
  }
  return log;
}

void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  CsvWriter w(path, {"step", "elbo", "kl", "recon", "triplet", "mask_kl"});
  for (const auto& r : rows) {
    w.row({std::to_string(r.step), format_double(r.terms.elbo), format_double(r.terms.kl), format_double(r.terms.recon),
           format_double(r.terms.triplet), format_double(r.terms.mask_kl)});
  }
}

void save_checkpoint(const TrainState& state, const CheckpointInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto& mutable_state = const_cast<TrainState&>(state);
  FlatParamView view = mutable_state.params();

  json arrays = json::array();
  auto emit = [&](const std::string& name, std::span<const double> values) {
    const std::string file = blob_name(name);
    write_blob(dir / file, values);
    arrays.push_back({{"name", name}, {"file", file}, {"size", values.size()}});
  };
  for (const auto& e : view.entries()) emit(e.name, e.values);
  emit("optimizer.first", state.optimizer.first);
  emit("optimizer.second", state.optimizer.second);
  emit("optimizer.third", state.optimizer.third);

  const OptimizerConfig& oc = state.optimizer.config;
  json hidden = json::array();
  const MlpParams& net = state.variant == Variant::metricl ? state.embedder : state.model.encoder;
  for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) hidden.push_back(net.layers[k].out_dim());

  json manifest = {
      {"format", "opbn-checkpoint"},
      {"version", kCheckpointVersion},
      {"variant", to_string(state.variant)},
      {"step", state.step},
      {"config_hash", info.config_hash},
      {"rng", {{"seed", info.seed}, {"step", state.step}}},
      {"dims",
       {{"data_dim", net.in_dim()},
        {"latent_dim", state.variant == Variant::metricl ? net.out_dim() : state.model.latent_dim},
        {"hidden", hidden},
        {"decoder", to_string(state.model.family)},
        {"queries", state.masks.queries()}}},
      {"optimizer",
       {{"kind", to_string(oc.kind)},
        {"learning_rate", oc.learning_rate},
        {"beta1", oc.beta1},
        {"beta2", oc.beta2},
        {"decay", oc.decay},
        {"momentum", oc.momentum},
        {"epsilon", oc.effective_epsilon()},
        {"clip_norm", oc.clip_norm},
        {"step", state.optimizer.step}}},
      {"arrays", arrays},
  };
  std::ofstream os(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
  if (!os) throw DataError("failed writing " + (dir / "manifest.json").string());
}

TrainState load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info,
                           const std::optional<std::string>& expected_hash) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw DataError("no checkpoint at " + dir.string() + " (produce one with `train`)");
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest " + path.string() + " is corrupt: " + e.what());
  }
  try {
    if (m.at("format") != "opbn-checkpoint") throw DataError("checkpoint manifest has an unknown format tag");
    const int version = m.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    const std::string hash = m.at("config_hash").get<std::string>();
    if (expected_hash && *expected_hash != hash) {
      throw ConfigError("checkpoint config hash " + hash + " does not match the current config (" + *expected_hash + ")");
    }
    const auto& d = m.at("dims");
    ModelDims dims{d.at("data_dim").get<std::size_t>(), d.at("latent_dim").get<std::size_t>(),
                   d.at("hidden").get<std::vector<std::size_t>>(),
                   decoder_family_from_string(d.at("decoder").get<std::string>())};
    const auto queries = d.at("queries").get<std::size_t>();
    const auto& o = m.at("optimizer");
    TrainConfig tc;
    tc.seed = m.at("rng").at("seed").get<std::uint64_t>();
    tc.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
    tc.optimizer.learning_rate = o.at("learning_rate").get<double>();
    tc.optimizer.beta1 = o.at("beta1").get<double>();
    tc.optimizer.beta2 = o.at("beta2").get<double>();
    tc.optimizer.decay = o.at("decay").get<double>();
    tc.optimizer.momentum = o.at("momentum").get<double>();
    tc.optimizer.epsilon = o.at("epsilon").get<double>();
    tc.optimizer.clip_norm = o.at("clip_norm").get<double>();

    TrainState s = TrainState::create(variant_from_string(m.at("variant").get<std::string>()), dims, queries, tc);
    s.step = m.at("step").get<std::uint64_t>();
    s.optimizer.step = o.at("step").get<std::uint64_t>();

    std::unordered_map<std::string, std::span<double>> targets;
    FlatParamView view = s.params();
    for (const auto& e : view.entries()) targets[e.name] = e.values;
    targets["optimizer.first"] = s.optimizer.first;
    targets["optimizer.second"] = s.optimizer.second;
    targets["optimizer.third"] = s.optimizer.third;
    std::size_t seen = 0;
    for (const auto& a : m.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      const auto it = targets.find(name);
      if (it == targets.end()) throw DataError("checkpoint: unexpected array '" + name + "'");
      const auto size = a.at("size").get<std::size_t>();
      if (size != it->second.size()) {
        throw DataError("checkpoint: array '" + name + "' has " + std::to_string(size) + " values, model needs " +
                        std::to_string(it->second.size()));
      }
      const auto values = read_blob(dir / a.at("file").get<std::string>(), size);
      std::copy(values.begin(), values.end(), it->second.begin());
      ++seen;
    }
    if (seen != targets.size()) throw DataError("checkpoint: manifest lists " + std::to_string(seen) + " of " +
                                                std::to_string(targets.size()) + " arrays");
    if (info) *info = {dims, queries, hash, tc.seed};
    return s;
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace opbn
