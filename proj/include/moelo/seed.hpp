#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace moelo {

using Rng = std::mt19937_64;

// All randomness is fanned out from one master seed. A stream is named by a
// purpose tag plus optional integer coordinates, e.g.
//   derive_seed(seed, "expert", {anchor})
//   derive_seed(seed, "fingerprint", {device, rp, time, sample})
// The tag is hashed with FNV-1a and every component is folded in with a
// SplitMix64 finalizer, so distinct (tag, coords) give unrelated streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                    std::initializer_list<std::uint64_t> coords = {}) noexcept {
  std::uint64_t h = splitmix64(master ^ fnv1a(tag));
  for (std::uint64_t c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, std::string_view tag,
                    std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(derive_seed(master, tag, coords));
}

}  // namespace moelo
