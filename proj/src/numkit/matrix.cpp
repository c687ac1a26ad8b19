#include "moelo/numkit/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace moelo::numkit {

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
  Matrix out(idx.size(), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows_) throw ShapeError("row index out of range");
    std::copy_n(data_.data() + idx[i] * cols_, cols_, out.data() + i * cols_);
  }
  return out;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace moelo::numkit
