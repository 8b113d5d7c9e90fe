#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace msdelay {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

/// Substream seed for worker `index` of stream `seed`. Streams are derived by
/// hashing (seed, index) through splitmix64, so (seed, index) fully determines
/// the draws of a replicate/subject regardless of scheduling.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (index + 1));
    detail::splitmix64(s);
    return detail::splitmix64(s);
}

/// Deterministic RNG with explicit transforms; avoids std:: distributions so
/// streams are identical across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform on the open interval (0, 1).
    double uniform01() {
        const double u = (bits() >> 11) * 0x1.0p-53;
        return u == 0.0 ? 0x1.0p-53 : u;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    double exponential(double rate) { return -std::log(uniform01()) / rate; }

    bool bernoulli(double p) { return uniform01() < p; }

  private:
    std::mt19937_64 engine_;
};

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
    return Rng(substream_seed(seed, index));
}

}  // namespace msdelay
