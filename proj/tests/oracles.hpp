#pragma once

// Straightforward reference computations used as independent oracles by the
// tests. Nothing here calls into the library's kernels.

#include <cmath>
#include <random>
#include <type_traits>
#include <vector>

#include "moelo/numkit/matrix.hpp"
#include "moelo/numkit/mlp.hpp"

namespace oracle {

using moelo::numkit::Matrix;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

inline Matrix dense(const moelo::numkit::DenseLayer& l, const Matrix& x) {
  Matrix y = matmul(x, l.weights);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) {
      y(i, j) += l.bias[j];
      if (l.activation == moelo::numkit::Activation::relu && y(i, j) < 0) y(i, j) = 0;
    }
  return y;
}

inline Matrix mlp_eval(const moelo::numkit::Mlp& net, Matrix x) {
  for (const auto& l : net.layers) x = dense(l, x);
  return x;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
  double m = v[0];
  for (double s : v) m = std::max(m, s);
  std::vector<double> out;
  double z = 0;
  for (double s : v) z += std::exp(s - m);
  for (double s : v) out.push_back(std::exp(s - m) / z);
  return out;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.flat()) v = u(rng);
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.flat()[i] - b.flat()[i]));
  return d;
}

// Exhaustive version of greedy herding: enumerates every ordered m-tuple of
// distinct indices and keeps the lexicographic minimum of
// (d_1, i_1, d_2, i_2, ...), where d_k is the distance between the mean of all
// points and the mean of the first k picks. Keying each distance before its
// index reproduces "closest first, lowest index on ties". `Num` is int64 for
// exact integer data (distances scaled by n*k so they stay integral) or
// long double for real-valued data.
template <typename Num>
std::vector<std::size_t> herding_bruteforce(const std::vector<std::vector<Num>>& pts, std::size_t m) {
  const std::size_t n = pts.size(), d = pts[0].size();
  std::vector<Num> total(d, Num(0));
  for (const auto& p : pts)
    for (std::size_t j = 0; j < d; ++j) total[j] += p[j];

  std::vector<std::size_t> best, cur;
  std::vector<Num> best_key, cur_key;
  std::vector<bool> used(n, false);
  std::vector<Num> sum(d, Num(0));

  auto dist = [&](std::size_t k) {
    Num s(0);
    for (std::size_t j = 0; j < d; ++j) {
      Num diff;
      if constexpr (std::is_integral_v<Num>) {
        diff = static_cast<Num>(k) * total[j] - static_cast<Num>(n) * sum[j];
      } else {
        diff = total[j] / static_cast<Num>(n) - sum[j] / static_cast<Num>(k);
      }
      s += diff * diff;
    }
    return s;
  };

  auto rec = [&](auto&& self, std::size_t depth) -> void {
    if (depth == m) {
      if (best.empty() || cur_key < best_key) best = cur, best_key = cur_key;
      return;
    }
    for (std::size_t c = 0; c < n; ++c) {
      if (used[c]) continue;
      for (std::size_t j = 0; j < d; ++j) sum[j] += pts[c][j];
      used[c] = true;
      cur.push_back(c);
      cur_key.push_back(dist(depth + 1));
      cur_key.push_back(static_cast<Num>(c));
      self(self, depth + 1);
      cur_key.pop_back();
      cur_key.pop_back();
      cur.pop_back();
      used[c] = false;
      for (std::size_t j = 0; j < d; ++j) sum[j] -= pts[c][j];
    }
  };
  rec(rec, 0);
  return best;
}

}  // namespace oracle
