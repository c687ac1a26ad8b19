#pragma once

#include <span>
#include <vector>

namespace moelo::numkit {

// Max-subtracted softmax. Throws ShapeError on empty input.
std::vector<double> softmax(std::span<const double> scores);
void softmax_inplace(std::span<double> scores);

// Unit-norm copy of v. Throws DegenerateInputError when ||v|| == 0.
std::vector<double> l2_normalize(std::span<const double> v);

double l2_norm(std::span<const double> v);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace moelo::numkit
