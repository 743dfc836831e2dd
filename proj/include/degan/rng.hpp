#pragma once

#include <cstdint>

namespace degan {

/// Deterministic random stream (splitmix64 core). Identical sequences on
/// every platform, unlike the distributions in <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed), seed_(seed) {}

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (pairs cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
    long uniform_int(long n);

    /// Independent child stream; depends only on this generator's seed and
    /// `stream`, never on how many values were drawn.
    Rng split(std::uint64_t stream) const;

private:
    std::uint64_t state_;
    std::uint64_t seed_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace degan
