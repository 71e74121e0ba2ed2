#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace bem {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Seed of a named substream: splitmix64(master ^ fnv1a(name)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name);

// Seed for an indexed item of a stream, e.g. (stream, iteration, slot).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> indices);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform_real(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [lo, hi] inclusive.
int uniform_int(Rng& rng, int lo, int hi);

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

double normal(Rng& rng, double mean, double stddev);

}  // namespace bem
