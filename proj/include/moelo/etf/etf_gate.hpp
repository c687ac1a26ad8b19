#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "moelo/numkit/matrix.hpp"

namespace moelo::etf {

// Fixed simplex equiangular tight frame: r_max unit anchors in R^dim whose
// pairwise cosine is -1/(r_max-1). Immutable once generated.
class AnchorFrame {
 public:
  AnchorFrame() = default;

  std::size_t dim() const noexcept { return anchors_.cols(); }
  std::size_t r_max() const noexcept { return anchors_.rows(); }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<const double> anchor(std::size_t r) const;
  const numkit::Matrix& anchors() const noexcept { return anchors_; }

  nlohmann::json to_json() const;
  static AnchorFrame from_json(const nlohmann::json& j);

  friend bool operator==(const AnchorFrame&, const AnchorFrame&) = default;

 private:
  friend AnchorFrame generate_etf(std::size_t, std::size_t, std::uint64_t);
  numkit::Matrix anchors_;  // r_max x dim, one anchor per row
  std::uint64_t seed_ = 0;
};

// M = sqrt(K/(K-1)) * U * (I - 11^T/K), U a seeded dim x K matrix with
// orthonormal columns. Throws GeometryError unless dim >= r_max >= 2.
AnchorFrame generate_etf(std::size_t r_max, std::size_t dim, std::uint64_t seed);

// Cosine of the unit vector z_hat with each active anchor.
std::vector<double> cosine_scores(std::span<const double> z_hat, const AnchorFrame& frame,
                                  std::span<const std::size_t> active);

enum class GateMode { soft, hard };

struct GateOutput {
  std::vector<double> scores;
  std::vector<double> probabilities;
  // Position in the active list of the best-aligned anchor; the lowest
  // position wins ties. Hard gating routes to this expert alone.
  std::size_t selected = 0;
};

GateOutput gate(std::span<const double> z_hat, const AnchorFrame& frame, std::span<const std::size_t> active,
                GateMode mode);

}  // namespace moelo::etf
