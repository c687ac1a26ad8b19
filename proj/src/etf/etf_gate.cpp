#include "moelo/etf/etf_gate.hpp"

#include <cmath>
#include <random>
#include <string>

#include "moelo/error.hpp"
#include "moelo/numkit/checkpoint.hpp"
#include "moelo/numkit/kernels.hpp"
#include "moelo/numkit/ops.hpp"
#include "moelo/seed.hpp"

namespace moelo::etf {

using numkit::Matrix;

std::span<const double> AnchorFrame::anchor(std::size_t r) const {
  if (r >= r_max()) throw RegistryError("anchor index " + std::to_string(r) + " beyond r_max");
  return anchors_.row(r);
}

nlohmann::json AnchorFrame::to_json() const {
  return {{"r_max", r_max()}, {"dim", dim()}, {"seed", seed_}, {"anchors", numkit::encode_doubles(anchors_.flat())}};
}

AnchorFrame AnchorFrame::from_json(const nlohmann::json& j) {
  try {
    AnchorFrame f;
    const auto r = j.at("r_max").get<std::size_t>();
    const auto d = j.at("dim").get<std::size_t>();
    f.seed_ = j.at("seed").get<std::uint64_t>();
    f.anchors_ = Matrix(r, d, numkit::decode_doubles(j.at("anchors")));
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed anchor frame: ") + e.what());
  }
}

AnchorFrame generate_etf(std::size_t r_max, std::size_t dim, std::uint64_t seed) {
  if (r_max < 2) throw GeometryError("an ETF needs at least two anchors");
  if (dim < r_max)
    throw GeometryError("ETF with " + std::to_string(r_max) + " anchors needs dim >= r_max, got " +
                        std::to_string(dim));
  const std::size_t k = r_max;

  // Columns of U, stored as rows: Gaussian draws, Gram-Schmidt run twice.
  Matrix u(k, dim);
  Rng rng = make_rng(seed, "etf");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : u.flat()) v = normal(rng);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < k; ++c) {
      auto col = u.row(c);
      for (std::size_t p = 0; p < c; ++p) {
        auto prev = u.row(p);
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += col[i] * prev[i];
        for (std::size_t i = 0; i < dim; ++i) col[i] -= proj * prev[i];
      }
      double n = 0.0;
      for (double v : col) n += v * v;
      n = std::sqrt(n);
      for (double& v : col) v /= n;
    }
  }

  // Anchor r = scale * (u_r - mean_c u_c).
  std::vector<double> mean(dim, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += u(c, i);
  for (double& v : mean) v /= static_cast<double>(k);
  const double scale = std::sqrt(static_cast<double>(k) / static_cast<double>(k - 1));

  AnchorFrame f;
  f.seed_ = seed;
  f.anchors_ = Matrix(k, dim);
  for (std::size_t r = 0; r < k; ++r) {
    auto a = f.anchors_.row(r);
    for (std::size_t i = 0; i < dim; ++i) a[i] = scale * (u(r, i) - mean[i]);
    const auto unit = numkit::l2_normalize(a);
    std::copy(unit.begin(), unit.end(), a.begin());
  }
  return f;
}

std::vector<double> cosine_scores(std::span<const double> z_hat, const AnchorFrame& frame,
                                  std::span<const std::size_t> active) {
  if (active.empty()) throw StateError("gating needs at least one active anchor");
  if (z_hat.size() != frame.dim()) throw ShapeError("z_hat width does not match the anchor dimension");
  std::vector<double> s;
  s.reserve(active.size());
  for (std::size_t a : active) {
    auto v = frame.anchor(a);
    s.push_back(numkit::kernels::dot(z_hat.data(), v.data(), v.size()));
  }
  return s;
}

GateOutput gate(std::span<const double> z_hat, const AnchorFrame& frame, std::span<const std::size_t> active,
                GateMode mode) {
  GateOutput out;
  out.scores = cosine_scores(z_hat, frame, active);
  out.probabilities = numkit::softmax(out.scores);
  out.selected = numkit::argmax(out.scores);
  return out;
}

}  // namespace moelo::etf
