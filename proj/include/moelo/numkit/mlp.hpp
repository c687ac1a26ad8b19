#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelo/numkit/matrix.hpp"

namespace moelo::numkit {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weights;             // in x out
  std::vector<double> bias;   // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const noexcept { return weights.rows(); }
  std::size_t out_dim() const noexcept { return weights.cols(); }
  std::size_t param_count() const noexcept { return weights.size() + bias.size(); }

  // He-uniform for ReLU layers, Glorot-uniform otherwise; zero bias.
  static DenseLayer init(std::size_t in, std::size_t out, Activation act, std::uint64_t seed);

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Feed-forward stack. Dropout (inverted) follows every hidden layer, i.e.
// every layer but the last, and only in training mode.
struct Mlp {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.0;

  // dims = {in, h1, ..., out}; hidden layers ReLU, last layer `output`.
  static Mlp build(std::span<const std::size_t> dims, Activation output, double dropout_rate,
                   std::uint64_t seed);
  static Mlp build(std::initializer_list<std::size_t> dims, Activation output, double dropout_rate,
                   std::uint64_t seed) {
    std::vector<std::size_t> d(dims);
    return build(std::span<const std::size_t>(d), output, dropout_rate, seed);
  }

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::size_t param_count() const noexcept;

  // Every weight and bias tensor, in layer order (w0, b0, w1, b1, ...).
  std::vector<std::span<double>> params();
  std::vector<std::span<const double>> params() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

// Everything backward needs from one forward pass.
struct MlpTape {
  std::vector<Matrix> inputs;       // input to layer l
  std::vector<Matrix> pre;          // pre-activation of layer l
  std::vector<Matrix> masks;        // dropout scale per hidden unit (empty when unused)
  Matrix output;
  bool valid() const noexcept { return !inputs.empty(); }
};

struct DenseGrads {
  Matrix weights;
  std::vector<double> bias;
};

struct MlpGrads {
  std::vector<DenseGrads> layers;

  static MlpGrads zeros_like(const Mlp& net);
  void zero();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::span<double>> tensors();
};

Matrix mlp_forward(const Mlp& net, const Matrix& x, bool training, std::uint64_t seed);
// Same as mlp_forward but keeps the intermediate state for mlp_backward.
Matrix mlp_forward(const Mlp& net, const Matrix& x, bool training, std::uint64_t seed, MlpTape& tape);

struct MlpBackward {
  MlpGrads grads;      // empty layers when parameter gradients were not requested
  Matrix input_grad;
};

// Gradients of a scalar loss given dLoss/dOutput. Throws StateError when the
// tape does not come from a forward pass through `net`.
MlpBackward mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& upstream,
                         bool param_grads = true, bool input_grad = true);

}  // namespace moelo::numkit
