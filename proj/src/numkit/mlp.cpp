#include "moelo/numkit/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "moelo/numkit/kernels.hpp"
#include "moelo/seed.hpp"

namespace moelo::numkit {

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Activation act, std::uint64_t seed) {
  if (in == 0 || out == 0) throw ShapeError("dense layer dimensions must be positive");
  DenseLayer layer{Matrix(in, out), std::vector<double>(out, 0.0), act};
  const double limit = act == Activation::relu ? std::sqrt(6.0 / static_cast<double>(in))
                                               : std::sqrt(6.0 / static_cast<double>(in + out));
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weights.flat()) w = dist(rng);
  return layer;
}

Mlp Mlp::build(std::span<const std::size_t> dims, Activation output, double dropout_rate, std::uint64_t seed) {
  if (dims.size() < 2) throw ShapeError("an MLP needs at least input and output dims");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  Mlp net;
  net.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = l + 2 == dims.size();
    net.layers.push_back(DenseLayer::init(dims[l], dims[l + 1], last ? output : Activation::relu,
                                          derive_seed(seed, "layer", {l})));
  }
  return net;
}

std::size_t Mlp::in_dim() const {
  if (layers.empty()) throw StateError("empty MLP");
  return layers.front().in_dim();
}

std::size_t Mlp::out_dim() const {
  if (layers.empty()) throw StateError("empty MLP");
  return layers.back().out_dim();
}

std::size_t Mlp::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

std::vector<std::span<double>> Mlp::params() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weights.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> Mlp::params() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weights.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (const auto& l : net.layers)
    g.layers.push_back({Matrix(l.in_dim(), l.out_dim()), std::vector<double>(l.out_dim(), 0.0)});
  return g;
}

void MlpGrads::zero() {
  for (auto& l : layers) {
    l.weights.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

std::vector<std::span<const double>> MlpGrads::tensors() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weights.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<double>> MlpGrads::tensors() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weights.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

namespace {

Matrix affine(const DenseLayer& layer, const Matrix& x) {
  Matrix y(x.rows(), layer.out_dim());
  for (std::size_t i = 0; i < y.rows(); ++i) std::copy(layer.bias.begin(), layer.bias.end(), y.row(i).begin());
  kernels::gemm_nn(x.rows(), layer.out_dim(), layer.in_dim(), x.data(), x.cols(), layer.weights.data(),
                   layer.weights.cols(), y.data(), y.cols());
  return y;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, std::uint64_t seed, std::size_t layer) {
  Matrix mask(rows, cols);
  Rng rng = make_rng(seed, "dropout", {layer});
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& m : mask.flat()) m = keep(rng) ? scale : 0.0;
  return mask;
}

Matrix forward_impl(const Mlp& net, const Matrix& x, bool training, std::uint64_t seed, MlpTape* tape) {
  if (net.layers.empty()) throw StateError("empty MLP");
  if (x.cols() != net.in_dim())
    throw ShapeError("input has " + std::to_string(x.cols()) + " columns, layer expects " +
                     std::to_string(net.in_dim()));
  if (tape) *tape = MlpTape{};
  Matrix cur = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    Matrix pre = affine(layer, cur);
    Matrix act = pre;
    if (layer.activation == Activation::relu)
      for (double& v : act.flat()) v = v > 0.0 ? v : 0.0;
    Matrix mask;
    const bool hidden = l + 1 < net.layers.size();
    if (training && hidden && net.dropout_rate > 0.0) {
      mask = dropout_mask(act.rows(), act.cols(), net.dropout_rate, seed, l);
      auto a = act.flat();
      auto m = mask.flat();
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= m[i];
    }
    if (tape) {
      tape->inputs.push_back(std::move(cur));
      tape->pre.push_back(std::move(pre));
      tape->masks.push_back(std::move(mask));
    }
    cur = std::move(act);
  }
  if (tape) tape->output = cur;
  return cur;
}

}  // namespace

Matrix mlp_forward(const Mlp& net, const Matrix& x, bool training, std::uint64_t seed) {
  return forward_impl(net, x, training, seed, nullptr);
}

Matrix mlp_forward(const Mlp& net, const Matrix& x, bool training, std::uint64_t seed, MlpTape& tape) {
  return forward_impl(net, x, training, seed, &tape);
}

MlpBackward mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& upstream, bool param_grads,
                         bool input_grad) {
  if (!tape.valid() || tape.inputs.size() != net.layers.size())
    throw StateError("backward called without a matching forward pass");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (tape.inputs[l].cols() != net.layers[l].in_dim() || tape.pre[l].cols() != net.layers[l].out_dim())
      throw StateError("forward tape was recorded on a different network");
  }
  if (upstream.rows() != tape.output.rows() || upstream.cols() != tape.output.cols())
    throw ShapeError("upstream gradient shape does not match the forward output");

  MlpBackward result;
  if (param_grads) result.grads = MlpGrads::zeros_like(net);
  Matrix g = upstream;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const DenseLayer& layer = net.layers[l];
    auto gf = g.flat();
    if (!tape.masks[l].empty()) {
      auto m = tape.masks[l].flat();
      for (std::size_t i = 0; i < gf.size(); ++i) gf[i] *= m[i];
    }
    if (layer.activation == Activation::relu) {
      auto p = tape.pre[l].flat();
      for (std::size_t i = 0; i < gf.size(); ++i)
        if (!(p[i] > 0.0)) gf[i] = 0.0;
    }
    const Matrix& in = tape.inputs[l];
    const std::size_t out = layer.out_dim();
    if (param_grads) {
      DenseGrads& dg = result.grads.layers[l];
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* gi = g.row(i).data();
        kernels::axpy(1.0, gi, dg.bias.data(), out);
        auto xi = in.row(i);
        for (std::size_t p = 0; p < xi.size(); ++p) {
          if (xi[p] == 0.0) continue;
          kernels::axpy(xi[p], gi, dg.weights.row(p).data(), out);
        }
      }
    }
    if (l == 0 && !input_grad) break;
    Matrix dx(g.rows(), layer.in_dim());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* gi = g.row(i).data();
      auto dxi = dx.row(i);
      for (std::size_t p = 0; p < dxi.size(); ++p) dxi[p] = kernels::dot(gi, layer.weights.row(p).data(), out);
    }
    g = std::move(dx);
  }
  if (input_grad) result.input_grad = std::move(g);
  return result;
}

}  // namespace moelo::numkit
