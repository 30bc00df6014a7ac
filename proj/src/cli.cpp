#include "opbn/cli.hpp"

#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "opbn/csv.hpp"
#include "opbn/error.hpp"
#include "opbn/eval.hpp"
#include "opbn/objective_check.hpp"
#include "opbn/params.hpp"

namespace opbn {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Paths {
  fs::path out;
  [[nodiscard]] fs::path data() const { return out / "data"; }
  [[nodiscard]] fs::path train_triplets() const { return out / "triplets" / "train.csv"; }
  [[nodiscard]] fs::path test_triplets() const { return out / "triplets" / "test.csv"; }
  [[nodiscard]] fs::path checkpoint() const { return out / "train" / "checkpoint"; }
};

class Artifacts {
 public:
  explicit Artifacts(fs::path out) : out_(std::move(out)) {}
  const fs::path& add(const fs::path& p) {
    list_.push_back(fs::relative(p, out_));
    return p;
  }
  void add_tree(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add(f);
  }
  [[nodiscard]] const std::vector<fs::path>& list() const { return list_; }

 private:
  fs::path out_;
  std::vector<fs::path> list_;
};

DatasetBundle require_bundle(const Paths& p) {
  if (!fs::exists(p.data() / "bundle.bin")) {
    throw DataError("no dataset bundle in " + p.data().string() + " (run `gen-data` first)");
  }
  return load_bundle(p.data());
}

std::vector<Triplet> require_triplets(const fs::path& path, const RunConfig& cfg) {
  if (!fs::exists(path)) throw DataError("no triplet corpus at " + path.string() + " (run `gen-triplets` first)");
  return read_triplets(path, cfg.oracle.queries);
}

TrainState require_checkpoint(const Paths& p, const RunConfig& cfg) {
  if (!fs::exists(p.checkpoint() / "manifest.json")) {
    throw DataError("no trained checkpoint at " + p.checkpoint().string() + " (run `train` first)");
  }
  return load_checkpoint(p.checkpoint(), nullptr, cfg.config_hash());
}

std::size_t require_side(const DatasetBundle& b) {
  const std::size_t side = b.image_side();
  if (side == 0) throw DataError("data dimension " + std::to_string(b.dim()) + " is not a square image");
  return side;
}

Image to_image(std::span<const double> pixels, std::size_t side) {
  Image img{side, side, {pixels.begin(), pixels.end()}};
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

void require_generative(const TrainState& s, const std::string& command) {
  if (s.variant == Variant::metricl) throw ContractError(command + " needs a generative model; metricl has no decoder");
}

bool field_present(const DatasetBundle& b, const std::string& field) {
  for (const auto& m : b.meta) {
    if (!meta_value(m, field)) return false;
  }
  return !b.meta.empty();
}

std::vector<double> field_values(const DatasetBundle& b, const std::string& field) {
  std::vector<double> v;
  v.reserve(b.rows());
  for (const auto& m : b.meta) v.push_back(*meta_value(m, field));
  return v;
}

// --- commands ----------------------------------------------------------------

void gen_data(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const auto& d = cfg.dataset;
  DatasetBundle b;
  switch (d.kind) {
    case DatasetKind::twofactor: {
      Stream rng(cfg.seed, Purpose::data);
      b = gen_twofactor_synthetic(d.n, d.side, rng);
      assign_split(b, d.test_fraction, cfg.seed);
      break;
    }
    case DatasetKind::mnist: {
      if (!fs::exists(d.mnist_images) || !fs::exists(d.mnist_labels)) {
        throw DataError("MNIST source not found (dataset.mnist_images = " + d.mnist_images.string() +
                        ", dataset.mnist_labels = " + d.mnist_labels.string() + ")");
      }
      const IdxImages src = read_mnist_idx(d.mnist_images, d.mnist_labels);
      Stream rng(cfg.seed, Purpose::data);
      b = gen_perturbed_mnist(src, d.per_class, d.angles, rng);
      assign_split(b, d.test_fraction, cfg.seed);
      break;
    }
    case DatasetKind::yale:
      b = load_yale(d.yale_dir, {d.side, cfg.seed});
      break;
    case DatasetKind::bundle:
      b = load_bundle(d.bundle_dir);
      if (b.split.empty()) assign_split(b, d.test_fraction, cfg.seed);
      break;
  }
  save_bundle(b, p.data());
  a.add_tree(p.data());
  log << "gen-data: " << b.rows() << " rows of dimension " << b.dim() << ", " << b.indices(Split::test).size()
      << " test rows -> " << p.data().string() << '\n';
}

void gen_triplets(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const DatasetBundle b = require_bundle(p);
  const auto train_rows = b.indices(Split::train);
  const auto test_rows = b.indices(Split::test);
  const auto& o = cfg.oracle;

  OracleConfig oc{o.noise, cfg.seed, o.stochastic, o.temperature};
  const auto train = sample_triplets(b.meta, o.queries, o.k, oc, train_rows);
  fs::create_directories(p.train_triplets().parent_path());
  write_triplets(p.train_triplets(), train, o.queries);
  a.add(p.train_triplets());

  std::size_t held = 0;
  if (o.heldout_k > 0) {
    if (test_rows.size() < 3) throw DataError("gen-triplets: fewer than 3 test rows for held-out triplets");
    // Held-out answers are noise free and come from an independent stream.
    OracleConfig hc{0.0, mix64(cfg.seed ^ 0x68656c646f7574ull), false, o.temperature};
    const auto test = sample_triplets(b.meta, o.queries, o.heldout_k, hc, test_rows);
    write_triplets(p.test_triplets(), test, o.queries);
    a.add(p.test_triplets());
    held = test.size();
  }
  log << "gen-triplets: " << train.size() << " training and " << held << " held-out triplets over "
      << o.queries.size() << " queries\n";
}

void train_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const DatasetBundle b = require_bundle(p);
  const auto pool = b.indices(Split::train);
  std::vector<Triplet> corpus;
  if (cfg.model.variant != Variant::vae) corpus = require_triplets(p.train_triplets(), cfg);

  ModelDims dims = cfg.model.dims;
  dims.data_dim = b.dim();
  TrainState state = TrainState::create(cfg.model.variant, dims, cfg.oracle.queries.size(), cfg.train);
  TrainOptions opts;
  opts.checkpoint_dir = p.out / "train";
  opts.config_hash = cfg.config_hash();
  opts.on_log = [&log](const MetricsRow& r) {
    log << "step " << std::setw(6) << r.step << "  elbo " << std::setprecision(6) << r.terms.elbo << "  kl "
        << r.terms.kl << "  recon " << r.terms.recon << "  triplet " << r.terms.triplet << "  mask_kl "
        << r.terms.mask_kl << '\n';
  };
  const auto rows = train(state, b.x, pool, corpus, cfg.train, opts);
  save_checkpoint(state, {dims, cfg.oracle.queries.size(), cfg.config_hash(), cfg.seed}, p.checkpoint());
  const fs::path metrics = p.out / "train" / "metrics.csv";
  write_metrics(metrics, rows);
  a.add_tree(p.out / "train");
}

void eval_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const TrainState state = require_checkpoint(p, cfg);
  const DatasetBundle b = require_bundle(p);
  const auto train_rows = b.indices(Split::train);
  const auto test_rows = b.indices(Split::test);
  if (test_rows.empty()) throw DataError("eval: the bundle has no test rows");

  const Matrix features = latent_features(state, b.x);
  ProbeOptions po;
  po.max_steps = cfg.eval.probe_steps;
  auto probe = [&](const std::string& field, ProbeKind kind) {
    if (!field_present(b, field)) return kNaN;
    return fit_probe(features, field_values(b, field), train_rows, test_rows, kind, po).metric;
  };

  std::vector<Triplet> held;
  if (fs::exists(p.test_triplets())) held = read_triplets(p.test_triplets(), cfg.oracle.queries);
  const PairDistance dist = native_distance(state, b.x);

  const std::string model = to_string(state.variant);
  std::vector<EvalRow> rows;
  rows.push_back({model, "all", probe("label", ProbeKind::logistic), probe("azimuth", ProbeKind::ridge),
                  probe("elevation", ProbeKind::ridge), held.empty() ? kNaN : triplet_pred_error(held, dist),
                  cfg.config_hash(), cfg.seed});
  for (std::uint32_t q = 0; q < cfg.oracle.queries.size(); ++q) {
    std::vector<Triplet> sub;
    for (const auto& t : held) {
      if (t.query == q) sub.push_back(t);
    }
    rows.push_back({model, cfg.oracle.queries[q].name, kNaN, kNaN, kNaN,
                    sub.empty() ? kNaN : triplet_pred_error(sub, dist), cfg.config_hash(), cfg.seed});
  }

  const fs::path dir = p.out / "eval";
  fs::create_directories(dir);
  write_eval_report(a.add(dir / "report.csv"), rows);
  export_embeddings(a.add(dir / "embeddings.csv"), features, b.meta);
  if (state.uses_masks()) {
    for (std::size_t q = 0; q < state.masks.queries(); ++q) {
      const auto m = state.masks.posterior_mean_mask(q);
      export_embeddings(a.add(dir / ("embeddings_" + cfg.oracle.queries[q].name + ".csv")), features, b.meta,
                        std::span<const double>(m), cfg.eval.mask_threshold);
    }
  }
  print_eval_report(rows, log);
}

void sample_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const TrainState state = require_checkpoint(p, cfg);
  require_generative(state, "sample");
  const DatasetBundle b = require_bundle(p);
  const std::size_t side = require_side(b);
  Stream rng(cfg.seed, Purpose::eval, 1);
  Matrix z(cfg.eval.sample_count, state.model.latent_dim);
  for (double& v : z.values()) v = rng.normal();
  const Matrix x = decode_mean(state.model, z);
  const fs::path dir = p.out / "samples";
  fs::create_directories(dir);
  for (std::size_t k = 0; k < x.rows(); ++k) {
    write_pgm(to_image(x.row(k), side), a.add(dir / ("sample_" + std::to_string(k) + ".pgm")));
  }
  log << "sample: wrote " << x.rows() << " images to " << dir.string() << '\n';
}

void recombine_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const TrainState state = require_checkpoint(p, cfg);
  require_generative(state, "recombine");
  if (!state.uses_masks() || state.masks.queries() < 2) {
    throw ContractError("recombine needs an opbn-masked model with at least two queries");
  }
  const DatasetBundle b = require_bundle(p);
  const std::size_t side = require_side(b);
  auto rows = b.indices(Split::test);
  if (rows.size() < 2) rows = b.indices(Split::train);
  if (rows.size() < 2) throw DataError("recombine: need at least two rows");

  const fs::path dir = p.out / "recombine";
  fs::create_directories(dir);
  CsvWriter pairs(a.add(dir / "pairs.csv"), {"pair", "id_a", "id_b", "take_from_b", "take_from_a"});
  Stream rng(cfg.seed, Purpose::eval, 2);
  for (std::size_t k = 0; k < cfg.eval.recombine_pairs; ++k) {
    const std::size_t ra = rows[rng.below(rows.size())];
    std::size_t rb = ra;
    while (rb == ra) rb = rows[rng.below(rows.size())];
    const auto mix = recombine_latents(state.model, state.masks, b.x.row(ra), b.x.row(rb), 0, 1,
                                       cfg.eval.mask_threshold);
    const std::string stem = "pair_" + std::to_string(k);
    write_pgm(to_image(b.x.row(ra), side), a.add(dir / (stem + "_a.pgm")));
    write_pgm(to_image(b.x.row(rb), side), a.add(dir / (stem + "_b.pgm")));
    write_pgm(to_image(mix, side), a.add(dir / (stem + "_mix.pgm")));
    pairs.row({std::to_string(k), std::to_string(b.meta[ra].id), std::to_string(b.meta[rb].id),
               cfg.oracle.queries[0].name, cfg.oracle.queries[1].name});
  }
  log << "recombine: wrote " << cfg.eval.recombine_pairs << " pairs to " << dir.string() << '\n';
}

void report_masks_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  const TrainState state = require_checkpoint(p, cfg);
  if (!state.uses_masks()) throw ContractError("report-masks needs an opbn-masked model");
  const auto names = cfg.query_names();
  const MaskReport r = mask_report(state.masks, names, cfg.eval.mask_threshold);
  write_mask_report(r, p.out / "masks");
  a.add_tree(p.out / "masks");
  print_mask_report(r, log);
}

int gradcheck_cmd(const RunConfig& cfg, const Paths& p, Artifacts& a, std::ostream& log) {
  TinyObjectiveSpec spec;
  spec.decoder = cfg.model.dims.decoder;
  spec.queries = cfg.oracle.queries.size();
  spec.objective = {cfg.train.likelihood, cfg.model.variant == Variant::opbn_masked, cfg.train.mc_samples,
                    cfg.train.triplet_weight};
  spec.seed = cfg.seed;
  TinyObjective t = TinyObjective::create(spec);
  const double tolerance = 1e-4;
  const GradCheckReport r = check_objective_gradient(t, {1e-5, tolerance, 1e-8});
  FlatParamView view;
  t.model.register_params(view);
  if (spec.objective.masked) t.masks.register_params(view);
  std::ostringstream text;
  text << r.summary() << " [" << view.describe(r.worst_coordinate) << "], tolerance " << tolerance << '\n';
  fs::create_directories(p.out / "gradcheck");
  std::ofstream os(a.add(p.out / "gradcheck" / "report.txt"));
  os << text.str();
  log << "gradcheck: " << text.str();
  return r.passed ? 0 : 1;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "gen-triplets", "train",        "eval",
                                              "sample",   "recombine",    "report-masks", "gradcheck"};
  return names;
}

int run_command(const std::string& command, const RunConfig& config, const fs::path& out, std::ostream& log) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end()) {
    throw ConfigError("unknown command '" + command + "'");
  }
  fs::create_directories(out);
  const Paths p{out};
  Artifacts a(out);
  RunManifest m;
  m.command = command;
  m.started_at = utc_now();
  const auto start = std::chrono::steady_clock::now();

  int status = 0;
  if (command == "gen-data") {
    gen_data(config, p, a, log);
  } else if (command == "gen-triplets") {
    gen_triplets(config, p, a, log);
  } else if (command == "train") {
    train_cmd(config, p, a, log);
  } else if (command == "eval") {
    eval_cmd(config, p, a, log);
  } else if (command == "sample") {
    sample_cmd(config, p, a, log);
  } else if (command == "recombine") {
    recombine_cmd(config, p, a, log);
  } else if (command == "report-masks") {
    report_masks_cmd(config, p, a, log);
  } else {
    status = gradcheck_cmd(config, p, a, log);
  }
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.artifacts = a.list();
  write_run_manifest(config, m, out);
  return status;
}

fs::path write_run_manifest(const RunConfig& config, const RunManifest& manifest, const fs::path& out) {
  json artifacts = json::array();
  for (const auto& p : manifest.artifacts) artifacts.push_back(p.generic_string());
  const json j = {
      {"command", manifest.command},
      {"config_hash", config.config_hash()},
      {"seed", config.seed},
      {"config", config.resolved},
      {"artifacts", artifacts},
      {"started_at", manifest.started_at},
      {"wall_clock_seconds", manifest.wall_clock_seconds},
      {"code_version", kCodeVersion},
  };
  const fs::path dir = out / "manifests";
  fs::create_directories(dir);
  const fs::path path = dir / (manifest.command + ".json");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  return path;
}

}  // namespace opbn
