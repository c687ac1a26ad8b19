#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moelo::model {

struct CheckLine {
  std::string name;
  bool passed = false;
  double value = 0.0;  // measured worst case
  double limit = 0.0;
};

// Central differences against forward_backward for the DR, CE and total
// objectives on a 4-sample batch through encoder, projection and two
// experts of two classes each. Every parameter entry is perturbed.
std::vector<CheckLine> gradient_suite(std::uint64_t seed);

// Unit norms (1e-12) and pairwise cosines -1/(K-1) (1e-9) for K = 2..16 in
// 64 dimensions.
std::vector<CheckLine> etf_suite(std::uint64_t seed);

}  // namespace moelo::model
