#include "moelo/numkit/ops.hpp"

#include <algorithm>
#include <cmath>

#include "moelo/error.hpp"
#include "moelo/numkit/kernels.hpp"

namespace moelo::numkit {

void softmax_inplace(std::span<double> s) {
  if (s.empty()) throw ShapeError("softmax of an empty vector");
  const double m = *std::max_element(s.begin(), s.end());
  double sum = 0.0;
  for (double& v : s) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : s) v /= sum;
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.begin(), scores.end());
  softmax_inplace(out);
  return out;
}

double l2_norm(std::span<const double> v) {
  return std::sqrt(kernels::dot(v.data(), v.data(), v.size()));
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw DegenerateInputError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace moelo::numkit
