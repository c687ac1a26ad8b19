#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace moelo::numkit {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so exact zeros compare by
  // absolute difference.
  double floor = 1e-6;
  // 0 = check every entry; otherwise a seeded random subset per tensor.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of `analytic` against `loss`, which must evaluate
// the scalar loss at the current contents of `params`. Each perturbed entry
// is restored before the next one. Throws NumericError on a non-finite loss.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const std::span<double>> params,
                           std::span<const std::span<const double>> analytic, const GradCheckOptions& opts = {});

}  // namespace moelo::numkit
