#include "opbn/mlp.hpp"

#include <cmath>
#include <string>

#include "opbn/error.hpp"

namespace opbn {
namespace {

void add_bias_and_activate(Matrix& z, const Layer& layer) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double v = row[c] + layer.bias[c];
      row[c] = layer.activation == Activation::tanh ? std::tanh(v) : v;
    }
  }
}

void check_same_architecture(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) throw ContractError("mlp_backward: gradient buffer has wrong depth");
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].weight.rows() != b.layers[k].weight.rows() ||
        a.layers[k].weight.cols() != b.layers[k].weight.cols()) {
      throw ContractError("mlp_backward: gradient buffer layer " + std::to_string(k) + " has wrong shape");
    }
  }
}

}  // namespace

MlpParams MlpParams::glorot(std::span<const std::size_t> dims, Activation hidden, Activation output,
                            Stream& rng) {
  if (dims.size() < 2) throw ContractError("MlpParams::glorot: need at least input and output width");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    Layer layer;
    layer.weight = Matrix(dims[k + 1], dims[k]);
    layer.bias.assign(dims[k + 1], 0.0);
    layer.activation = (k + 2 == dims.size()) ? output : hidden;
    const double limit = std::sqrt(6.0 / double(dims[k] + dims[k + 1]));
    for (double& w : layer.weight.values()) w = (2.0 * rng.uniform() - 1.0) * limit;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams MlpParams::zeros_like() const {
  MlpParams z = *this;
  for (auto& layer : z.layers) {
    layer.weight.fill(0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return z;
}

std::size_t MlpParams::in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
std::size_t MlpParams::out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

MlpForward mlp_forward(const MlpParams& params, const Matrix& input) {
  if (params.layers.empty()) throw ContractError("mlp_forward: network has no layers");
  if (input.cols() != params.in_dim()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(input.cols()) + " columns, network expects " +
                     std::to_string(params.in_dim()));
  }
  MlpForward result;
  result.tape.params = &params;
  const Matrix* current = &input;
  for (const auto& layer : params.layers) {
    result.tape.inputs.push_back(*current);
    Matrix z = matmul_nt(*current, layer.weight);
    add_bias_and_activate(z, layer);
    result.tape.outputs.push_back(std::move(z));
    current = &result.tape.outputs.back();
  }
  result.output = result.tape.outputs.back();
  require_finite(result.output, "mlp_forward");
  return result;
}

Matrix mlp_apply(const MlpParams& params, const Matrix& input) {
  if (params.layers.empty()) throw ContractError("mlp_apply: network has no layers");
  if (input.cols() != params.in_dim()) throw ShapeError("mlp_apply: input width does not match network");
  Matrix current = input;
  for (const auto& layer : params.layers) {
    Matrix z = matmul_nt(current, layer.weight);
    add_bias_and_activate(z, layer);
    current = std::move(z);
  }
  require_finite(current, "mlp_apply");
  return current;
}

Matrix mlp_backward_accumulate(const MlpTape& tape, const Matrix& upstream, MlpParams& grads) {
  if (tape.params == nullptr || tape.outputs.size() != tape.params->layers.size() || tape.outputs.empty()) {
    throw ContractError("mlp_backward: tape does not belong to a completed forward pass");
  }
  const MlpParams& params = *tape.params;
  check_same_architecture(params, grads);
  const Matrix& out = tape.outputs.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ContractError("mlp_backward: upstream gradient is " + std::to_string(upstream.rows()) + "x" +
                        std::to_string(upstream.cols()) + " but the taped output is " +
                        std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
  }

  Matrix delta = upstream;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const Layer& layer = params.layers[k];
    if (layer.activation == Activation::tanh) {
      const auto y = tape.outputs[k].values();
      auto d = delta.values();
      for (std::size_t e = 0; e < d.size(); ++e) d[e] *= 1.0 - y[e] * y[e];
    }
    Layer& g = grads.layers[k];
    const Matrix gw = matmul_tn(delta, tape.inputs[k]);
    auto gwv = g.weight.values();
    const auto gwn = gw.values();
    for (std::size_t e = 0; e < gwv.size(); ++e) gwv[e] += gwn[e];
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    delta = matmul(delta, layer.weight);
  }
  return delta;
}

MlpGradients mlp_backward(const MlpTape& tape, const Matrix& upstream) {
  if (tape.params == nullptr) throw ContractError("mlp_backward: empty tape");
  MlpGradients g{tape.params->zeros_like(), {}};
  g.input = mlp_backward_accumulate(tape, upstream, g.params);
  return g;
}

}  // namespace opbn
