#include "moelo/numkit/adam.hpp"

#include <cmath>

#include "moelo/error.hpp"

namespace moelo::numkit {

AdamState AdamState::for_params(std::span<const std::span<double>> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.first.emplace_back(p.size(), 0.0);
    s.second.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state) {
  const AdamConfig& c = state.config;
  if (!(c.learning_rate > 0.0)) throw ConfigError("Adam learning rate must be positive");
  if (grads.size() != params.size() || state.first.size() != params.size() || state.second.size() != params.size())
    throw ShapeError("Adam: parameter/gradient/moment tensor counts differ");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t].size() != params[t].size() || state.first[t].size() != params[t].size() ||
        state.second[t].size() != params[t].size())
      throw ShapeError("Adam: tensor " + std::to_string(t) + " shape mismatch");
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, step);
  const double bc2 = 1.0 - std::pow(c.beta2, step);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    auto& m = state.first[t];
    auto& v = state.second[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace moelo::numkit
