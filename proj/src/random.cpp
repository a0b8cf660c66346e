#include "radpose/random.hpp"

#include "radpose/stats.hpp"

namespace radpose {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() { return stats::normal_quantile(uniform()); }

}  // namespace radpose
