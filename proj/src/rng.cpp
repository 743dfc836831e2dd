#include "degan/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace degan {

namespace {
std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

long Rng::uniform_int(long n) {
    if (n <= 0) throw std::invalid_argument("uniform_int requires n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = 0;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<long>(x % un);
}

Rng Rng::split(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    std::uint64_t mixed = splitmix64(s);
    return Rng(mixed);
}

}  // namespace degan
