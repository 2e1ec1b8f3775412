#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>

namespace bridgekit {

/**
 * Counter-based random stream.
 *
 * Every draw is a pure function of (seed, stream id, counter), so a stream can
 * be recreated from those three numbers alone. Child streams are derived with
 * split(), which is how per-path and per-sample generators are handed out.
 */
class Stream {
public:
    using result_type = std::uint64_t;

    Stream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_id_(stream_id), key_(mix(seed ^ mix(stream_id + kGolden))) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second variate is kept for the next call.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] keeps the log finite.
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }

    /// Independent child stream; deterministic in (this stream's key, child).
    Stream split(std::uint64_t child) const { return Stream(key_, child); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    // SplitMix64 finalizer.
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bridgekit
