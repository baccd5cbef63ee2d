#pragma once

// Deterministic splittable random streams.
//
// Stream derivation: the 256-bit xoshiro256++ state is filled by four outputs
// of a splitmix64 sequence seeded with mix(master_seed) ^ mix(stream_id + phi)
// where mix is the splitmix64 finalizer and phi = 0x9E3779B97F4A7C15. This is
// an O(1), documented mixing function of (master_seed, stream_id): identical
// pairs give identical sequences on every platform, different stream ids give
// unrelated states.
//
// gaussian() uses the Marsaglia polar method (exact distribution, caches the
// spare deviate); uniform_int() uses Lemire's multiply-shift rejection
// sampling (unbiased, no modulo bias).

#include <displab/errors.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace displab {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class RandomStream {
  public:
    RandomStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : stream_id_(stream_id) {
        std::uint64_t sm = detail::mix64(master_seed) ^
                           detail::mix64(stream_id + 0x9E3779B97F4A7C15ULL);
        for (auto& word : s_) word = detail::splitmix64_next(sm);
        // xoshiro256++ requires a nonzero state; splitmix cannot produce four
        // zero words from any seed, but keep the guard explicit.
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t stream_id() const { return stream_id_; }

    // xoshiro256++ core step.
    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased uniform integer in [1, n] (Lemire multiply-shift rejection).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
        std::uint64_t x = next_u64();
        unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
        std::uint64_t low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64) + 1;
    }

    // Standard normal via the polar method.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * factor;
        have_spare_ = true;
        return u * factor;
    }

  private:
    std::uint64_t s_[4];
    std::uint64_t stream_id_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline RandomStream derive_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    return RandomStream(master_seed, stream_id);
}

}  // namespace displab
