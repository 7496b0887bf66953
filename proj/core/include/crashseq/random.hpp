#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace crashseq {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Counter-based: element k of the stream keyed by `key` is derive_seed(key, k).
// Unbiased draw in [0, bound) by rejection.
std::uint64_t keyed_uniform(std::uint64_t key, std::uint64_t& counter, std::uint64_t bound);

// Fisher-Yates permutation of [0, n) driven only by `key`.
std::vector<std::size_t> keyed_permutation(std::size_t n, std::uint64_t key);

// Uniform double in [0, 1) from 53 random bits; portable across standard
// libraries, unlike std::uniform_real_distribution.
inline double unit_uniform(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller normal draw; portable for the same reason.
double standard_normal(Rng& rng);

}  // namespace crashseq
