#pragma once

#include <cstdint>
#include <random>

namespace fluctsim {

// splitmix64 finalizer. Used to derive independent stream seeds from the
// scenario seed so that e.g. churn generation and the run itself do not
// share one RNG sequence (trace replay must reproduce the generative run).
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG with explicit samplers. Samplers are written out by hand
// instead of using std::*_distribution so draw counts never depend on the
// standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // uniform in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform in [0, n), n > 0
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection-free modulo is biased for huge n; n here is small (indices)
        return eng_() % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    double exponential(double mean) { return -mean * std::log(1.0 - uniform01()); }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

} // namespace fluctsim
