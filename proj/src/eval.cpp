#include "opbn/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "opbn/csv.hpp"
#include "opbn/error.hpp"
#include "opbn/optimizer.hpp"
#include "opbn/params.hpp"

namespace opbn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Standardized {
  Matrix train;
  Matrix test;
};

Standardized standardize(const Matrix& features, std::span<const std::size_t> train, std::span<const std::size_t> test) {
  const std::size_t h = features.cols();
  std::vector<double> mean(h, 0.0), sd(h, 0.0);
  for (std::size_t r : train) {
    for (std::size_t k = 0; k < h; ++k) mean[k] += features(r, k);
  }
  for (double& m : mean) m /= double(train.size());
  for (std::size_t r : train) {
    for (std::size_t k = 0; k < h; ++k) sd[k] += (features(r, k) - mean[k]) * (features(r, k) - mean[k]);
  }
  for (double& s : sd) {
    s = std::sqrt(s / double(train.size()));
    if (!(s > 1e-12)) s = 1.0;
  }
  auto take = [&](std::span<const std::size_t> rows) {
    Matrix m(rows.size(), h);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t k = 0; k < h; ++k) m(r, k) = (features(rows[r], k) - mean[k]) / sd[k];
    }
    return m;
  };
  return {take(train), take(test)};
}

ProbeResult fit_ridge(const Standardized& s, std::span<const double> y_train, std::span<const double> y_test,
                      const ProbeOptions& options) {
  const std::size_t n = s.train.rows(), h = s.train.cols();
  double y_mean = 0.0;
  for (double v : y_train) y_mean += v;
  y_mean /= double(n);
  const Eigen::Map<const RowMatrix> x(s.train.values().data(), n, h);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = y_train[r] - y_mean;
  // Standardised columns have zero training mean, so the intercept is y_mean.
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += options.ridge_lambda;
  const Eigen::VectorXd w = gram.ldlt().solve(x.transpose() * y);

  const Eigen::Map<const RowMatrix> xt(s.test.values().data(), s.test.rows(), h);
  const Eigen::VectorXd pred = (xt * w).array() + y_mean;
  double sq = 0.0;
  for (std::size_t r = 0; r < y_test.size(); ++r) sq += (pred[r] - y_test[r]) * (pred[r] - y_test[r]);
  ProbeResult res;
  res.kind = ProbeKind::ridge;
  res.metric = std::sqrt(sq / double(y_test.size()));
  return res;
}

ProbeResult fit_logistic(const Standardized& s, std::span<const double> y_train, std::span<const double> y_test,
                         const ProbeOptions& options) {
  std::map<int, std::size_t> class_index;
  for (double v : y_train) class_index.emplace(static_cast<int>(std::lround(v)), 0);
  if (class_index.size() < 2) throw DataError("fit_probe: degenerate target, training rows hold a single class");
  ProbeResult res;
  res.kind = ProbeKind::logistic;
  for (auto& [label, idx] : class_index) {
    idx = res.classes.size();
    res.classes.push_back(label);
  }
  const std::size_t n = s.train.rows(), h = s.train.cols(), c = res.classes.size();
  std::vector<std::size_t> y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = class_index.at(static_cast<int>(std::lround(y_train[r])));

  Matrix w(h, c), b(1, c), gw(h, c), gb(1, c);
  FlatParamView params, grads;
  params.add("w", w);
  params.add("b", b);
  grads.add("w", gw);
  grads.add("b", gb);
  OptimizerConfig oc;
  oc.learning_rate = options.learning_rate;
  oc.clip_norm = 0.0;
  OptimizerState opt = OptimizerState::create(oc, params.size());

  const Eigen::Map<const RowMatrix> x(s.train.values().data(), n, h);
  RowMatrix prob(n, c);
  for (std::size_t step = 0;; ++step) {
    const Eigen::Map<const RowMatrix> wm(w.values().data(), h, c);
    const Eigen::Map<const Eigen::RowVectorXd> bm(b.values().data(), c);
    prob = (x * wm).rowwise() + bm;
    for (std::size_t r = 0; r < n; ++r) {
      auto row = prob.row(r);
      row.array() -= row.maxCoeff();
      row = row.array().exp().matrix();
      row /= row.sum();
      row[y[r]] -= 1.0;
    }
    prob /= double(n);
    Eigen::Map<RowMatrix> gwm(gw.values().data(), h, c);
    Eigen::Map<Eigen::RowVectorXd> gbm(gb.values().data(), c);
    gwm = x.transpose() * prob + options.logistic_l2 * wm;
    gbm = prob.colwise().sum();
    double norm = 0.0;
    for (double v : grads.flatten()) norm += v * v;
    res.final_grad_norm = std::sqrt(norm);
    res.steps = step;
    if (res.final_grad_norm < options.grad_tolerance || step >= options.max_steps) break;
    optimizer_step(opt, params, grads);
  }

  const Eigen::Map<const RowMatrix> xt(s.test.values().data(), s.test.rows(), h);
  const Eigen::Map<const RowMatrix> wm(w.values().data(), h, c);
  const Eigen::Map<const Eigen::RowVectorXd> bm(b.values().data(), c);
  const RowMatrix logits = (xt * wm).rowwise() + bm;
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < y_test.size(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (res.classes[best] != static_cast<int>(std::lround(y_test[r]))) ++wrong;
  }
  res.metric = 100.0 * double(wrong) / double(y_test.size());
  return res;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string to_string(ProbeKind k) { return k == ProbeKind::logistic ? "logistic" : "ridge"; }

ProbeResult fit_probe(const Matrix& features, std::span<const double> target, std::span<const std::size_t> train,
                      std::span<const std::size_t> test, ProbeKind kind, const ProbeOptions& options) {
  if (target.size() != features.rows()) throw ShapeError("fit_probe: target length does not match feature rows");
  if (train.empty() || test.empty()) throw DataError("fit_probe: empty train or test split");
  const std::set<std::size_t> train_set(train.begin(), train.end());
  for (std::size_t r : test) {
    if (train_set.count(r)) throw DataError("fit_probe: row " + std::to_string(r) + " is in both train and test");
  }
  for (std::size_t r : train) {
    if (r >= features.rows()) throw ShapeError("fit_probe: train row out of range");
  }
  for (std::size_t r : test) {
    if (r >= features.rows()) throw ShapeError("fit_probe: test row out of range");
  }
  std::vector<double> y_train, y_test;
  for (std::size_t r : train) y_train.push_back(target[r]);
  for (std::size_t r : test) y_test.push_back(target[r]);
  for (double v : y_train) {
    if (!std::isfinite(v)) throw DataError("fit_probe: missing or non-finite target");
  }
  for (double v : y_test) {
    if (!std::isfinite(v)) throw DataError("fit_probe: missing or non-finite target");
  }
  const Standardized s = standardize(features, train, test);
  return kind == ProbeKind::ridge ? fit_ridge(s, y_train, y_test, options) : fit_logistic(s, y_train, y_test, options);
}

double triplet_pred_error(std::span<const Triplet> triplets, const PairDistance& distance) {
  if (triplets.empty()) throw DataError("triplet_pred_error: no triplets");
  double wrong = 0.0;
  for (const auto& t : triplets) {
    const double dij = distance(t.query, t.i, t.j);
    const double dil = distance(t.query, t.i, t.l);
    if (dij > dil) {
      wrong += 1.0;
    } else if (dij == dil) {
      wrong += 0.5;
    }
  }
  return 100.0 * wrong / double(triplets.size());
}

PairDistance posterior_distance(const PosteriorBatch& posteriors, const MaskPosterior* masks) {
  std::vector<std::vector<double>> mask_values;
  if (masks) {
    for (std::size_t q = 0; q < masks->queries(); ++q) mask_values.push_back(masks->posterior_mean_mask(q));
  }
  return [&posteriors, mask_values](std::uint32_t q, std::uint32_t a, std::uint32_t b) {
    const std::size_t h = posteriors.mean.cols();
    if (!mask_values.empty() && q >= mask_values.size()) throw ContractError("posterior_distance: query has no mask");
    double d = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      const double dk = sym_kl_univariate(posteriors.mean(a, k), posteriors.log_std(a, k), posteriors.mean(b, k),
                                          posteriors.log_std(b, k));
      d += mask_values.empty() ? dk : mask_values[q][k] * dk;
    }
    return d;
  };
}

PairDistance embedding_distance(const Matrix& embeddings) {
  return [&embeddings](std::uint32_t, std::uint32_t a, std::uint32_t b) {
    double d = 0.0;
    for (std::size_t k = 0; k < embeddings.cols(); ++k) {
      const double v = embeddings(a, k) - embeddings(b, k);
      d += v * v;
    }
    return d;
  };
}

Matrix latent_features(const TrainState& state, const Matrix& x) {
  if (state.variant == Variant::metricl) return mlp_apply(state.embedder, x);
  return encode_batch(state.model, x).mean;
}

PairDistance native_distance(const TrainState& state, const Matrix& x) {
  if (state.variant == Variant::metricl) {
    auto e = std::make_shared<Matrix>(mlp_apply(state.embedder, x));
    return [e, inner = embedding_distance(*e)](std::uint32_t q, std::uint32_t a, std::uint32_t b) {
      return inner(q, a, b);
    };
  }
  auto post = std::make_shared<PosteriorBatch>(encode_batch(state.model, x));
  return [post, inner = posterior_distance(*post, state.uses_masks() ? &state.masks : nullptr)](
             std::uint32_t q, std::uint32_t a, std::uint32_t b) { return inner(q, a, b); };
}

MaskReport mask_report(const MaskPosterior& masks, std::span<const std::string> query_names, double threshold) {
  if (masks.queries() == 0) throw ContractError("mask_report: no queries");
  if (query_names.size() != masks.queries()) throw ContractError("mask_report: one name per query required");
  MaskReport r;
  r.queries.assign(query_names.begin(), query_names.end());
  r.threshold = threshold;
  const std::size_t nq = masks.queries(), h = masks.latent_dim();
  r.values = Matrix(nq, h);
  r.active.resize(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    const auto m = masks.posterior_mean_mask(q);
    std::copy(m.begin(), m.end(), r.values.row(q).begin());
    for (std::size_t k = 0; k < h; ++k) {
      if (m[k] > threshold) r.active[q].push_back(k);
    }
  }
  r.overlap = Matrix(nq, nq);
  r.cosine = Matrix(nq, nq);
  for (std::size_t a = 0; a < nq; ++a) {
    for (std::size_t b = 0; b < nq; ++b) {
      std::vector<std::size_t> both;
      std::set_intersection(r.active[a].begin(), r.active[a].end(), r.active[b].begin(), r.active[b].end(),
                            std::back_inserter(both));
      const std::size_t denom = std::min(r.active[a].size(), r.active[b].size());
      r.overlap(a, b) = denom == 0 ? 0.0 : double(both.size()) / double(denom);
      r.cosine(a, b) = cosine(r.values.row(a), r.values.row(b));
    }
  }
  return r;
}

void write_mask_report(const MaskReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t h = report.values.cols();
  std::vector<std::string> header{"query"};
  for (std::size_t k = 0; k < h; ++k) header.push_back("m" + std::to_string(k));
  header.push_back("active");
  CsvWriter masks(dir / "masks.csv", header);
  for (std::size_t q = 0; q < report.queries.size(); ++q) {
    std::vector<std::string> row{report.queries[q]};
    for (std::size_t k = 0; k < h; ++k) row.push_back(format_double(report.values(q, k)));
    row.push_back(std::to_string(report.active[q].size()));
    masks.row(row);
  }
  CsvWriter pairs(dir / "mask_overlap.csv", {"query_a", "query_b", "overlap", "cosine"});
  for (std::size_t a = 0; a < report.queries.size(); ++a) {
    for (std::size_t b = 0; b < report.queries.size(); ++b) {
      pairs.row({report.queries[a], report.queries[b], format_double(report.overlap(a, b)),
                 format_double(report.cosine(a, b))});
    }
  }
}

void print_mask_report(const MaskReport& report, std::ostream& os) {
  os << "masks (threshold " << report.threshold << ")\n";
  for (std::size_t q = 0; q < report.queries.size(); ++q) {
    os << "  " << std::left << std::setw(12) << report.queries[q] << std::right;
    for (std::size_t k = 0; k < report.values.cols(); ++k) os << ' ' << std::fixed << std::setprecision(2) << report.values(q, k);
    os << "  active=" << report.active[q].size() << '\n';
  }
  os << "pairwise overlap / cosine\n";
  for (std::size_t a = 0; a < report.queries.size(); ++a) {
    for (std::size_t b = a + 1; b < report.queries.size(); ++b) {
      os << "  " << report.queries[a] << " vs " << report.queries[b] << ": " << std::setprecision(3)
         << report.overlap(a, b) << " / " << report.cosine(a, b) << '\n';
    }
  }
  os.unsetf(std::ios::floatfield);
}

std::vector<double> recombine_latents(const EncoderDecoder& model, const MaskPosterior& masks,
                                      std::span<const double> image_a, std::span<const double> image_b,
                                      std::size_t from_b, std::size_t from_a, double threshold) {
  if (from_a >= masks.queries() || from_b >= masks.queries()) throw ContractError("recombine_latents: unknown query");
  if (std::all_of(masks.mean.values().begin(), masks.mean.values().end(), [](double v) { return v == 0.0; })) {
    throw ContractError("recombine_latents: masks are untrained (still at their initial values)");
  }
  if (image_a.size() != model.data_dim || image_b.size() != model.data_dim) {
    throw ShapeError("recombine_latents: image size does not match model");
  }
  Matrix x(2, model.data_dim);
  std::copy(image_a.begin(), image_a.end(), x.row(0).begin());
  std::copy(image_b.begin(), image_b.end(), x.row(1).begin());
  const Matrix mean = encode_batch(model, x).mean;
  const auto mb = masks.posterior_mean_mask(from_b);
  const auto ma = masks.posterior_mean_mask(from_a);
  Matrix z(1, model.latent_dim);
  for (std::size_t k = 0; k < model.latent_dim; ++k) {
    if (mb[k] > threshold) {
      z(0, k) = mean(1, k);
    } else if (ma[k] > threshold) {
      z(0, k) = mean(0, k);
    } else {
      z(0, k) = 0.5 * (mean(0, k) + mean(1, k));
    }
  }
  const Matrix out = decode_mean(model, z);
  return {out.values().begin(), out.values().end()};
}

void export_embeddings(const std::filesystem::path& path, const Matrix& latents, std::span<const MetaRow> meta,
                       std::optional<std::span<const double>> mask, double threshold) {
  if (meta.size() != latents.rows()) throw ShapeError("export_embeddings: metadata rows do not match latent rows");
  if (mask && mask->size() != latents.cols()) throw ShapeError("export_embeddings: mask width does not match latents");
  std::vector<std::size_t> dims;
  for (std::size_t k = 0; k < latents.cols(); ++k) {
    if (!mask || (*mask)[k] > threshold) dims.push_back(k);
  }
  std::vector<std::string> header{"id", "label", "azimuth", "elevation", "trajectory", "angle"};
  for (std::size_t k : dims) header.push_back("z" + std::to_string(k));
  CsvWriter w(path, header);
  for (std::size_t r = 0; r < latents.rows(); ++r) {
    const MetaRow& m = meta[r];
    std::vector<std::string> row{std::to_string(m.id),
                                 m.label ? std::to_string(*m.label) : std::string(),
                                 optional_cell(m.azimuth),
                                 optional_cell(m.elevation),
                                 m.trajectory ? std::to_string(*m.trajectory) : std::string(),
                                 optional_cell(m.angle)};
    for (std::size_t k : dims) row.push_back(format_double(latents(r, k)));
    w.row(row);
  }
}

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  CsvWriter w(path, {"model", "setting", "classification_error_pct", "azimuth_rmsd_deg", "elevation_rmsd_deg",
                     "triplet_error_pct", "config_hash", "seed"});
  for (const auto& r : rows) {
    w.row({r.model, r.setting, cell(r.classification_error), cell(r.azimuth_rmsd), cell(r.elevation_rmsd),
           cell(r.triplet_error), r.config_hash, std::to_string(r.seed)});
  }
}

void print_eval_report(std::span<const EvalRow> rows, std::ostream& os) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
  };
  os << std::left << std::setw(13) << "model" << std::setw(14) << "setting" << std::right << std::setw(10) << "class %"
     << std::setw(10) << "az rmsd" << std::setw(10) << "el rmsd" << std::setw(11) << "triplet %" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(13) << r.model << std::setw(14) << r.setting << std::right << std::setw(10)
       << num(r.classification_error) << std::setw(10) << num(r.azimuth_rmsd) << std::setw(10) << num(r.elevation_rmsd)
       << std::setw(11) << num(r.triplet_error) << '\n';
  }
}

}  // namespace opbn
