#include <cmath>
#include <limits>

#include "doctest.h"
#include "opbn/error.hpp"
#include "opbn/grad_check.hpp"
#include "opbn/matrix.hpp"
#include "opbn/mlp.hpp"
#include "opbn/optimizer.hpp"
#include "opbn/params.hpp"

using namespace opbn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Stream& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

MlpParams single_layer(double w, double b, Activation act) {
  MlpParams p;
  p.layers.push_back({Matrix{{w}}, {b}, act});
  return p;
}

// Sum of upstream * output, whose gradient is exactly the backward pass.
double contracted_output(const MlpParams& p, const Matrix& x, const Matrix& upstream) {
  const Matrix y = mlp_apply(p, x);
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += y.values()[k] * upstream.values()[k];
  return s;
}

}  // namespace

TEST_CASE("matrix products agree with naive loops") {
  Stream rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(3, 5, rng);
  const Matrix ab = matmul(a, b);
  const Matrix atc = matmul_tn(a, c);
  const Matrix cct = matmul_nt(c, c);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      CHECK(ab(i, j) == doctest::Approx(s).epsilon(1e-13));
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a(k, i) * c(k, j);
      CHECK(atc(i, j) == doctest::Approx(s).epsilon(1e-13));
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += c(i, k) * c(j, k);
      CHECK(cct(i, j) == doctest::Approx(s).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("require_finite names the offending entry") {
  Matrix m(2, 2, 1.0);
  CHECK_NOTHROW(require_finite(m, "m"));
  m(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(require_finite(m, "m"), NumericError);
}

TEST_CASE("mlp_forward examples") {
  Stream rng(2, Purpose::init);
  SUBCASE("zero weights with tanh give zeros") {
    const std::vector<std::size_t> dims{3, 4, 2};
    MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::tanh, rng).zeros_like();
    const auto f = mlp_forward(p, random_matrix(5, 3, rng));
    for (double v : f.output.values()) CHECK(v == 0.0);
  }
  SUBCASE("tanh(1)") {
    const auto f = mlp_forward(single_layer(1.0, 0.0, Activation::tanh), Matrix{{1.0}});
    CHECK(std::abs(f.output(0, 0) - 0.7615941559557649) < 1e-9);
  }
  SUBCASE("identity layer passes input through") {
    MlpParams p;
    Matrix eye(3, 3);
    for (std::size_t k = 0; k < 3; ++k) eye(k, k) = 1.0;
    p.layers.push_back({eye, {0.0, 0.0, 0.0}, Activation::identity});
    const Matrix x = random_matrix(4, 3, rng);
    CHECK(mlp_forward(p, x).output == x);
  }
  SUBCASE("dimension mismatch") {
    const std::vector<std::size_t> dims{3, 2};
    MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::identity, rng);
    CHECK_THROWS_AS(mlp_forward(p, Matrix(2, 4)), ShapeError);
  }
}

TEST_CASE("glorot initialisation is bounded and seeded") {
  const std::vector<std::size_t> dims{10, 6, 4};
  Stream a(3, Purpose::init), b(3, Purpose::init);
  const MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::identity, a);
  CHECK(p == MlpParams::glorot(dims, Activation::tanh, Activation::identity, b));
  const double limit = std::sqrt(6.0 / 16.0);
  for (double v : p.layers[0].weight.values()) CHECK(std::abs(v) <= limit);
  for (double v : p.layers[0].bias) CHECK(v == 0.0);
  CHECK(p.layers[1].activation == Activation::identity);
  CHECK(p.parameter_count() == 10 * 6 + 6 + 6 * 4 + 4);
}

TEST_CASE("mlp_backward examples") {
  Stream rng(4, Purpose::init);
  SUBCASE("zero upstream gives zero gradients") {
    const std::vector<std::size_t> dims{3, 4, 2};
    MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::identity, rng);
    const auto f = mlp_forward(p, random_matrix(5, 3, rng));
    const auto g = mlp_backward(f.tape, Matrix(5, 2));
    for (const auto& l : g.params.layers) {
      for (double v : l.weight.values()) CHECK(v == 0.0);
      for (double v : l.bias) CHECK(v == 0.0);
    }
    for (double v : g.input.values()) CHECK(v == 0.0);
  }
  SUBCASE("linear layer weight gradient is upstream^T input") {
    const std::vector<std::size_t> dims{3, 2};
    MlpParams p = MlpParams::glorot(dims, Activation::identity, Activation::identity, rng);
    const Matrix x = random_matrix(5, 3, rng), g = random_matrix(5, 2, rng);
    const auto grads = mlp_backward(mlp_forward(p, x).tape, g);
    const Matrix expected = matmul_tn(g, x);
    for (std::size_t k = 0; k < expected.size(); ++k) {
      CHECK(grads.params.layers[0].weight.values()[k] == doctest::Approx(expected.values()[k]).epsilon(1e-14));
    }
  }
  SUBCASE("stale tape is rejected") {
    const std::vector<std::size_t> dims{3, 2};
    MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::identity, rng);
    MlpTape tape = mlp_forward(p, random_matrix(2, 3, rng)).tape;
    CHECK_THROWS_AS(mlp_backward(tape, Matrix(3, 2)), ContractError);
    MlpTape empty;
    CHECK_THROWS_AS(mlp_backward(empty, Matrix(2, 2)), ContractError);
  }
}

TEST_CASE("mlp gradients match central differences on 100 random instances") {
  Stream rng(5, Purpose::probe);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<std::size_t> dims{1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(3)};
    const Activation out = trial % 2 ? Activation::tanh : Activation::identity;
    MlpParams p = MlpParams::glorot(dims, Activation::tanh, out, rng);
    for (auto& l : p.layers) {
      for (double& b : l.bias) b = 0.2 * rng.normal();
    }
    const std::size_t batch = 1 + rng.below(4);
    Matrix x = random_matrix(batch, dims[0], rng);
    const Matrix up = random_matrix(batch, dims[2], rng);
    const auto grads = mlp_backward(mlp_forward(p, x).tape, up);

    MlpParams g = grads.params;
    FlatParamView pv, gv;
    pv.add("net", p);
    gv.add("net", g);
    const auto p0 = pv.flatten();
    const auto r = grad_check([&](std::span<const double> v) {
      pv.unflatten(v);
      return contracted_output(p, x, up);
    }, p0, gv.flatten());
    pv.unflatten(p0);
    worst = std::max(worst, r.max_relative_error);

    const auto ri = grad_check([&](std::span<const double> v) {
      std::copy(v.begin(), v.end(), x.values().begin());
      return contracted_output(p, x, up);
    }, std::vector<double>(x.values().begin(), x.values().end()), grads.input.values());
    worst = std::max(worst, ri.max_relative_error);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("flat parameter views") {
  Stream rng(6, Purpose::init);
  const std::vector<std::size_t> dims{3, 4, 2};
  MlpParams p = MlpParams::glorot(dims, Activation::tanh, Activation::identity, rng);
  Matrix extra = random_matrix(2, 2, rng);
  FlatParamView v;
  v.add("net", p);
  v.add("extra", extra);
  CHECK(v.size() == p.parameter_count() + 4);

  SUBCASE("flatten then unflatten is bit-identical") {
    const auto flat = v.flatten();
    const MlpParams before = p;
    v.unflatten(flat);
    CHECK(p == before);
    CHECK(v.flatten() == flat);
  }
  SUBCASE("offsets name their array") {
    CHECK(v.describe(0) == "net.W0[0]");
    CHECK(v.describe(12) == "net.b0[0]");
    CHECK(v.describe(v.size() - 1) == "extra[3]");
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(v.unflatten(std::vector<double>(3)), ShapeError);
  }
}

TEST_CASE("optimizer steps") {
  Matrix w(1, 1, 0.5), g(1, 1, 1.0);
  FlatParamView pv, gv;
  pv.add("w", w);
  gv.add("w", g);

  SUBCASE("adam first step moves by the learning rate") {
    auto s = OptimizerState::create({}, 1);
    optimizer_step(s, pv, gv);
    CHECK(w(0, 0) - 0.5 == doctest::Approx(-1e-3).epsilon(1e-7));
    CHECK(s.step == 1);
  }
  SUBCASE("rmsprop first step") {
    OptimizerConfig c;
    c.kind = OptimizerKind::rmsprop_momentum;
    auto s = OptimizerState::create(c, 1);
    optimizer_step(s, pv, gv);
    CHECK(w(0, 0) - 0.5 == doctest::Approx(-0.0033314830232638475).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    g.fill(0.0);
    for (auto kind : {OptimizerKind::adam, OptimizerKind::rmsprop_momentum}) {
      OptimizerConfig c;
      c.kind = kind;
      auto s = OptimizerState::create(c, 1);
      optimizer_step(s, pv, gv);
      CHECK(w(0, 0) == 0.5);
    }
  }
  SUBCASE("identical gradient sequences give identical trajectories") {
    Matrix w2(1, 1, 0.5), g2(1, 1);
    FlatParamView pv2, gv2;
    pv2.add("w", w2);
    gv2.add("w", g2);
    auto s1 = OptimizerState::create({}, 1), s2 = OptimizerState::create({}, 1);
    Stream r1(9), r2(9);
    for (int k = 0; k < 50; ++k) {
      g(0, 0) = r1.normal();
      g2(0, 0) = r2.normal();
      optimizer_step(s1, pv, gv);
      optimizer_step(s2, pv2, gv2);
    }
    CHECK(w == w2);
    CHECK(s1.first == s2.first);
  }
  SUBCASE("clipping rescales to the global norm") {
    g(0, 0) = 200.0;
    OptimizerConfig c;
    c.kind = OptimizerKind::rmsprop_momentum;
    auto s = OptimizerState::create(c, 1);
    optimizer_step(s, pv, gv);
    CHECK(s.first[0] == doctest::Approx(0.1 * 100.0 * 100.0));
  }
  SUBCASE("non-finite gradient aborts and names the parameter") {
    g(0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto s = OptimizerState::create({}, 1);
    try {
      optimizer_step(s, pv, gv);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("w[0]") != std::string::npos);
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    CHECK(w(0, 0) == 0.5);
    CHECK(s.step == 0);
  }
}

TEST_CASE("grad_check") {
  const auto quadratic = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += 0.5 * v * v;
    return s;
  };
  const std::vector<double> p{0.3, -1.2, 2.5, 0.0, 4.0};
  SUBCASE("quadratic") {
    // Central differences are exact on a quadratic, so a wider step only trims rounding.
    const auto r = grad_check(quadratic, p, p, {1e-3, 1e-6, 1e-8});
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-10);
  }
  SUBCASE("corrupted coordinate is reported") {
    auto bad = p;
    bad[2] += 0.1;
    const auto r = grad_check(quadratic, p, bad);
    CHECK_FALSE(r.passed);
    CHECK(r.worst_coordinate == 2);
  }
  SUBCASE("non-finite loss is flagged") {
    const auto r = grad_check([](std::span<const double> v) { return v[1] > 0.0 ? std::log(-1.0) : v[0]; },
                              std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0});
    CHECK_FALSE(r.passed);
    REQUIRE(r.non_finite.size() == 1);
    CHECK(r.non_finite[0] == 1);
  }
}
