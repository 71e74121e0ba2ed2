#include "bem/rng.hpp"

#include <cmath>

namespace bem {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream_name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(master ^ h);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> indices) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t i : indices) h = splitmix64(h ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

int uniform_int(Rng& rng, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
  // Multiply-shift on 32 high bits; bias is below 2^-32 for the spans used here.
  const std::uint64_t r = rng() >> 32;
  return lo + static_cast<int>((r * span) >> 32);
}

// Box-Muller, one value per call; libstdc++'s normal_distribution caches a
// spare value across calls which would tie outputs to call history.
double normal(Rng& rng, double mean, double stddev) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace bem
