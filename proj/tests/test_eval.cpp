#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "opbn/csv.hpp"
#include "opbn/error.hpp"
#include "opbn/eval.hpp"

using namespace opbn;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("opbn_test_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Matrix random_matrix(std::size_t r, std::size_t c, Stream& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

void split(std::size_t n, std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
  for (std::size_t k = 0; k < n; ++k) (k % 4 == 0 ? test : train).push_back(k);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("fit_probe") {
  Stream rng(1);
  std::vector<std::size_t> train, test;

  SUBCASE("separable two-class toy") {
    // Two clusters with a clear margin along the first feature.
    Matrix f = random_matrix(400, 3, rng);
    std::vector<double> y(400);
    for (std::size_t r = 0; r < 400; ++r) {
      y[r] = double(r % 2);
      f(r, 0) = 0.3 * f(r, 0) + (y[r] > 0.0 ? 2.0 : -2.0);
    }
    split(400, train, test);
    const auto p = fit_probe(f, y, train, test, ProbeKind::logistic);
    CHECK(p.metric == 0.0);
    CHECK(p.classes == std::vector<int>{0, 1});
  }
  SUBCASE("exact linear target") {
    // The ridge penalty shrinks coefficients by about lambda / n_train, so n is large.
    const std::size_t n = 20000;
    const Matrix f = random_matrix(n, 4, rng);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = 3.0 * f(r, 0) - 2.0 * f(r, 2) + 0.5 * f(r, 3) + 7.0;
    split(n, train, test);
    const auto p = fit_probe(f, y, train, test, ProbeKind::ridge);
    CHECK(p.metric < 1e-6);
  }
  SUBCASE("shuffled labels are at chance") {
    const std::size_t n = 40000;
    const Matrix f = random_matrix(n, 5, rng);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = double(rng.below(4));
    split(n, train, test);
    const auto p = fit_probe(f, y, train, test, ProbeKind::logistic);
    const double m = double(test.size());
    const double sigma = 100.0 * std::sqrt(0.75 * 0.25 / m);
    CHECK(std::abs(p.metric - 75.0) < 3.0 * sigma);
  }
  SUBCASE("degenerate inputs") {
    const Matrix f = random_matrix(20, 2, rng);
    split(20, train, test);
    const std::vector<double> one(20, 3.0);
    CHECK_THROWS_AS(fit_probe(f, one, train, test, ProbeKind::logistic), DataError);
    std::vector<double> y(20);
    for (std::size_t r = 0; r < 20; ++r) y[r] = double(r % 2);
    std::vector<std::size_t> leak = test;
    leak.push_back(train[0]);
    CHECK_THROWS_AS(fit_probe(f, y, train, leak, ProbeKind::logistic), DataError);
  }
}

TEST_CASE("triplet_pred_error") {
  std::vector<MetaRow> meta(50);
  Stream rng(2);
  for (std::size_t r = 0; r < meta.size(); ++r) meta[r].azimuth = 100.0 * rng.uniform();
  const std::vector<QueryId> q{QueryId::scalar("azimuth")};
  const auto triplets = sample_triplets(meta, q, 3000, {});

  SUBCASE("oracle distances replay perfectly") {
    const PairDistance oracle = [&](std::uint32_t, std::uint32_t a, std::uint32_t b) {
      return std::abs(*meta[a].azimuth - *meta[b].azimuth);
    };
    CHECK(triplet_pred_error(triplets, oracle) == 0.0);
  }
  SUBCASE("random embeddings are at chance") {
    const Matrix e = random_matrix(50, 3, rng);
    const double err = triplet_pred_error(triplets, embedding_distance(e));
    CHECK(std::abs(err - 50.0) < 3.0 * 100.0 * std::sqrt(0.25 / 3000.0));
  }
  SUBCASE("ties count one half") {
    const PairDistance flat = [](std::uint32_t, std::uint32_t, std::uint32_t) { return 1.0; };
    CHECK(triplet_pred_error(triplets, flat) == 50.0);
  }
  SUBCASE("monotone transforms of the distance give the same error") {
    const Matrix e = random_matrix(50, 3, rng);
    const PairDistance d = embedding_distance(e);
    const PairDistance squashed = [&](std::uint32_t k, std::uint32_t a, std::uint32_t b) {
      return std::log1p(std::sqrt(d(k, a, b)));
    };
    CHECK(triplet_pred_error(triplets, d) == triplet_pred_error(triplets, squashed));
  }
}

TEST_CASE("mask_report") {
  const std::vector<std::string> names{"a", "b", "c"};
  SUBCASE("initial masks activate every dimension") {
    const MaskPosterior m = MaskPosterior::create(3, 4);
    const MaskReport r = mask_report(m, names);
    for (const auto& set : r.active) CHECK(set.size() == 4);
    CHECK(r.overlap(0, 1) == 1.0);
    CHECK(r.cosine(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("disjoint and empty sets") {
    MaskPosterior m = MaskPosterior::create(3, 4);
    const double on = logit(0.9), off = logit(0.05);
    for (std::size_t h = 0; h < 4; ++h) {
      m.mean(0, h) = h < 2 ? on : off;
      m.mean(1, h) = h < 2 ? off : on;
      m.mean(2, h) = off;
    }
    const MaskReport r = mask_report(m, names);
    CHECK(r.active[0] == std::vector<std::size_t>{0, 1});
    CHECK(r.active[1] == std::vector<std::size_t>{2, 3});
    CHECK(r.active[2].empty());
    CHECK(r.overlap(0, 1) == 0.0);
    CHECK(r.overlap(0, 2) == 0.0);
    CHECK(r.overlap(0, 0) == 1.0);

    const auto dir = temp_dir("masks");
    write_mask_report(r, dir);
    CHECK(read_csv(dir / "masks.csv", {"query", "m0", "m1", "m2", "m3", "active"}).size() == 3);
    CHECK(read_csv(dir / "mask_overlap.csv", {"query_a", "query_b", "overlap", "cosine"}).size() == 9);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("recombine_latents") {
  Stream rng(3, Purpose::init);
  const EncoderDecoder model = EncoderDecoder::create({16, 4, {8}, DecoderFamily::bernoulli}, rng);
  MaskPosterior masks = MaskPosterior::create(2, 4);
  Stream drng(4);
  std::vector<double> a(16), b(16);
  for (double& v : a) v = drng.uniform();
  for (double& v : b) v = drng.uniform();

  CHECK_THROWS_AS(recombine_latents(model, masks, a, b, 0, 1), ContractError);

  for (std::size_t h = 0; h < 4; ++h) {
    masks.mean(0, h) = h < 2 ? logit(0.9) : logit(0.05);
    masks.mean(1, h) = h < 2 ? logit(0.05) : logit(0.9);
  }

  SUBCASE("identical inputs reconstruct") {
    Matrix x(1, 16);
    std::copy(a.begin(), a.end(), x.row(0).begin());
    const Matrix expected = decode_mean(model, encode_batch(model, x).mean);
    const auto out = recombine_latents(model, masks, a, a, 0, 1);
    for (std::size_t k = 0; k < 16; ++k) CHECK(out[k] == doctest::Approx(expected(0, k)).epsilon(1e-14));
  }
  SUBCASE("swapping roles changes the output") {
    CHECK(recombine_latents(model, masks, a, b, 0, 1) != recombine_latents(model, masks, b, a, 0, 1));
  }
  SUBCASE("dimensions come from the right donor") {
    Matrix x(2, 16);
    std::copy(a.begin(), a.end(), x.row(0).begin());
    std::copy(b.begin(), b.end(), x.row(1).begin());
    const Matrix mean = encode_batch(model, x).mean;
    Matrix z(1, 4);
    z(0, 0) = mean(1, 0);
    z(0, 1) = mean(1, 1);
    z(0, 2) = mean(0, 2);
    z(0, 3) = mean(0, 3);
    const Matrix expected = decode_mean(model, z);
    const auto out = recombine_latents(model, masks, a, b, 0, 1);
    for (std::size_t k = 0; k < 16; ++k) CHECK(out[k] == doctest::Approx(expected(0, k)).epsilon(1e-14));
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(recombine_latents(model, masks, a, b, 0, 2), ContractError);
    CHECK_THROWS_AS(recombine_latents(model, masks, std::vector<double>(3), b, 0, 1), ShapeError);
  }
}

TEST_CASE("export_embeddings") {
  const auto dir = temp_dir("export");
  Stream rng(5);
  const Matrix z = random_matrix(12, 10, rng);
  std::vector<MetaRow> meta(12);
  for (std::size_t r = 0; r < 12; ++r) {
    meta[r].id = std::int64_t(r);
    meta[r].label = int(r % 3);
  }
  export_embeddings(dir / "all.csv", z, meta);
  std::vector<std::string> header{"id", "label", "azimuth", "elevation", "trajectory", "angle"};
  for (int k = 0; k < 10; ++k) header.push_back("z" + std::to_string(k));
  const auto rows = read_csv(dir / "all.csv", header);
  CHECK(rows.size() == 12);
  CHECK(rows[4][1] == "1");
  CHECK(rows[4][2].empty());

  std::vector<double> mask(10, 0.1);
  for (std::size_t k : {0, 2, 3, 5, 6, 8, 9}) mask[k] = 0.7;
  export_embeddings(dir / "masked.csv", z, meta, std::span<const double>(mask), 0.2);
  std::vector<std::string> masked{"id", "label", "azimuth", "elevation", "trajectory", "angle",
                                  "z0", "z2", "z3", "z5", "z6", "z8", "z9"};
  CHECK(read_csv(dir / "masked.csv", masked).size() == 12);

  CHECK_THROWS_AS(export_embeddings(dir / "x.csv", z, std::span<const MetaRow>(meta).first(5)), ShapeError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("native distances and features") {
  TrainConfig cfg;
  const ModelDims dims{9, 3, {4}, DecoderFamily::bernoulli};
  Stream rng(6);
  Matrix x(5, 9);
  for (double& v : x.values()) v = rng.uniform();

  TrainState masked = TrainState::create(Variant::opbn_masked, dims, 2, cfg);
  masked.masks.mean(0, 0) = 5.0;
  masked.masks.mean(1, 0) = -5.0;
  const PairDistance d = native_distance(masked, x);
  CHECK(d(0, 1, 2) != d(1, 1, 2));
  CHECK(d(0, 1, 2) == d(0, 1, 2));
  CHECK(d(0, 3, 3) == 0.0);

  TrainState plain = masked;
  plain.variant = Variant::opbn;
  const PairDistance u = native_distance(plain, x);
  CHECK(u(0, 1, 2) == u(1, 1, 2));

  const Matrix f = latent_features(plain, x);
  CHECK(f.rows() == 5);
  CHECK(f.cols() == 3);

  TrainState metric = TrainState::create(Variant::metricl, dims, 1, cfg);
  const Matrix e = latent_features(metric, x);
  double sq = 0.0;
  for (std::size_t k = 0; k < 3; ++k) sq += std::pow(e(1, k) - e(2, k), 2);
  CHECK(native_distance(metric, x)(0, 1, 2) == doctest::Approx(sq).epsilon(1e-14));
}

TEST_CASE("eval report") {
  const auto dir = temp_dir("report");
  const double nan = std::nan("");
  const std::vector<EvalRow> rows{{"opbn-masked", "all", 12.5, 3.25, nan, 4.0, "00ff", 7},
                                  {"opbn-masked", "identity", nan, nan, nan, 2.5, "00ff", 7}};
  write_eval_report(dir / "r.csv", rows);
  const auto back = read_csv(dir / "r.csv", {"model", "setting", "classification_error_pct", "azimuth_rmsd_deg",
                                             "elevation_rmsd_deg", "triplet_error_pct", "config_hash", "seed"});
  REQUIRE(back.size() == 2);
  CHECK(back[0] == std::vector<std::string>{"opbn-masked", "all", "12.5", "3.25", "", "4", "00ff", "7"});
  std::ostringstream os;
  print_eval_report(rows, os);
  CHECK(os.str().find("identity") != std::string::npos);
  std::filesystem::remove_all(dir);
}
