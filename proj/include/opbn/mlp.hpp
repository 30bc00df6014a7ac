#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "opbn/matrix.hpp"
#include "opbn/rng.hpp"

namespace opbn {

enum class Activation { tanh, identity };

struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::tanh;

  [[nodiscard]] std::size_t in_dim() const { return weight.cols(); }
  [[nodiscard]] std::size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Fully connected network: a chain of affine maps, each followed by its activation.
struct MlpParams {
  std::vector<Layer> layers;

  /// Glorot-uniform weights, zero biases. `dims` lists widths from input to
  /// output; hidden layers use `hidden`, the last layer uses `output`.
  static MlpParams glorot(std::span<const std::size_t> dims, Activation hidden, Activation output,
                          Stream& rng);

  /// Same architecture with every weight and bias set to zero.
  [[nodiscard]] MlpParams zeros_like() const;

  [[nodiscard]] std::size_t in_dim() const;
  [[nodiscard]] std::size_t out_dim() const;
  [[nodiscard]] std::size_t parameter_count() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Activations kept by the forward pass for the backward pass.
struct MlpTape {
  const MlpParams* params = nullptr;
  std::vector<Matrix> inputs;   // input to layer k
  std::vector<Matrix> outputs;  // activated output of layer k

  [[nodiscard]] const Matrix& output() const { return outputs.back(); }
};

struct MlpForward {
  Matrix output;
  MlpTape tape;
};

struct MlpGradients {
  MlpParams params;
  Matrix input;
};

MlpForward mlp_forward(const MlpParams& params, const Matrix& input);

/// Output only, without keeping a tape.
Matrix mlp_apply(const MlpParams& params, const Matrix& input);

MlpGradients mlp_backward(const MlpTape& tape, const Matrix& upstream);

/// Adds the parameter gradients into `grads` (same architecture as the taped
/// network) and returns the gradient with respect to the input.
Matrix mlp_backward_accumulate(const MlpTape& tape, const Matrix& upstream, MlpParams& grads);

}  // namespace opbn
