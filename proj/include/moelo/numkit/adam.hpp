#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace moelo::numkit {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  // Zeroed moments mirroring the given parameter tensors.
  static AdamState for_params(std::span<const std::span<double>> params, AdamConfig config = {});
};

// One bias-corrected Adam update. Throws ShapeError when the gradient or
// moment tensors do not mirror `params`, ConfigError when lr <= 0.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state);

}  // namespace moelo::numkit
