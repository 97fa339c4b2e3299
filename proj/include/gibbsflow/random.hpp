#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace gibbsflow
{

/// Pseudo-random generator with independent keyed streams.
///
/// A stream is identified by (seed, key1, key2, key3), typically
/// (run seed, particle id, time index, purpose). Each key tuple is hashed with
/// SplitMix64 into the 256-bit state of a xoshiro256** generator, so the draws
/// seen by a particle do not depend on how particles are scheduled on threads.
class Rng
{
  public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) { seed_state(seed); }

    static Rng stream(std::uint64_t seed, std::uint64_t key1, std::uint64_t key2 = 0,
                      std::uint64_t key3 = 0)
    {
        std::uint64_t h = splitmix(seed ^ 0x6a09e667f3bcc909ULL);
        h = splitmix(h ^ (key1 + 0xbb67ae8584caa73bULL));
        h = splitmix(h ^ (key2 + 0x3c6ef372fe94f82bULL));
        h = splitmix(h ^ (key3 + 0xa54ff53a5f1d36f1ULL));
        return Rng(h);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal by the Marsaglia polar method (second variate discarded).
    double normal()
    {
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0)
                return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        // Lemire's multiply-shift with rejection
        for (;;) {
            const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= n || low >= (-n) % n)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix(std::uint64_t x)
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    void seed_state(std::uint64_t seed)
    {
        std::uint64_t x = seed;
        for (auto& s : s_) {
            x = splitmix(x);
            s = x;
        }
    }

    std::uint64_t s_[4];
};

} // namespace gibbsflow
