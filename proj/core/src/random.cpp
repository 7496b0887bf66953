#include "crashseq/random.hpp"

#include <cmath>
#include <numbers>

namespace crashseq {

std::uint64_t keyed_uniform(std::uint64_t key, std::uint64_t& counter, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  while (true) {
    const std::uint64_t r = derive_seed(key, counter++);
    if (r < limit) return r % bound;
  }
}

std::vector<std::size_t> keyed_permutation(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::uint64_t counter = 0;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(keyed_uniform(key, counter, i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

double standard_normal(Rng& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace crashseq
