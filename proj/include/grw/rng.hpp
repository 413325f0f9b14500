#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "grw/common.hpp"

namespace grw {

/// Counter-based generator in the SplitMix64 family: the state advances by a
/// fixed odd increment and every output is a finalizer of the counter, so a
/// stream is fully determined by its starting counter. Streams derived from
/// (master_seed, stream_id) are independent for all practical purposes, which
/// makes ensemble results invariant under the worker count.
class RngStream {
public:
    RngStream() : state_(0) {}

    explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ kSeedSalt)) {}

    /// Stream keyed by (master seed, stream id). Two rounds of mixing keep
    /// low-entropy ids (0, 1, 2, ...) from producing correlated counters.
    RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : state_(mix(mix(master_seed ^ kSeedSalt) + mix(stream_id ^ kStreamSalt))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n = 0 is a caller bug.
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform01() * static_cast<double>(n)) % n;
    }

    /// Exponential waiting time; rate 0 gives +infinity (no event, ever).
    double exponential(double rate) {
        if (rate <= 0.0) return std::numeric_limits<double>::infinity();
        return -std::log1p(-uniform01()) / rate;
    }

    /// Inverse-CDF draw from an explicit probability vector (need not be
    /// normalized to better than rounding; the last bucket absorbs the rest).
    std::size_t discrete(const std::vector<double>& probs) {
        double u = uniform01();
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
            acc += probs[k];
            if (u < acc) return k;
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

private:
    static constexpr std::uint64_t kSeedSalt = 0x43B0D7E5ED9170F5ull;
    static constexpr std::uint64_t kStreamSalt = 0x9E6C63D0876A9A47ull;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

/// Stable sub-stream ids for named purposes (restarts, tomography bases, ...),
/// so that adding a consumer never shifts another consumer's stream.
inline std::uint64_t derive_stream_id(std::uint64_t purpose, std::uint64_t index) {
    return purpose * 0x100000001B3ull + index;
}

namespace stream_purpose {
inline constexpr std::uint64_t trajectory = 1;
inline constexpr std::uint64_t restart = 2;
inline constexpr std::uint64_t tomography = 3;
inline constexpr std::uint64_t ensemble_pick = 4;
inline constexpr std::uint64_t scenario = 5;
inline constexpr std::uint64_t rerun = 6;
} // namespace stream_purpose

} // namespace grw
