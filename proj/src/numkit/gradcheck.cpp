#include "moelo/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moelo/error.hpp"
#include "moelo/seed.hpp"

namespace moelo::numkit {

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const std::span<double>> params,
                           std::span<const std::span<const double>> analytic, const GradCheckOptions& opts) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: tensor counts differ");
  auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
  };
  eval();

  GradCheckReport rep;
  rep.passed = true;
  Rng rng(derive_seed(opts.seed, "gradcheck"));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    if (analytic[t].size() != p.size()) throw ShapeError("grad_check: tensor shape mismatch");
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_per_tensor > 0 && idx.size() > opts.max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double orig = p[i];
      p[i] = orig + opts.step;
      const double up = eval();
      p[i] = orig - opts.step;
      const double down = eval();
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_tensor = t;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error < opts.tolerance;
  return rep;
}

}  // namespace moelo::numkit
