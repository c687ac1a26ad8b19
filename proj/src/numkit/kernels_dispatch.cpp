#include <cstdlib>
#include <string_view>

#include "moelo/numkit/kernels.hpp"

namespace moelo::numkit::kernels {
namespace {

const KernelTable& choose() noexcept {
  if (const char* env = std::getenv("MOELO_SIMD"); env && std::string_view(env) == "scalar") {
    return scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return *t;
  if (const KernelTable* t = neon_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& table = choose();
  return table;
}

}  // namespace moelo::numkit::kernels
