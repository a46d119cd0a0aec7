// Counter-based splittable random number generator.
//
// Every stochastic component in the library draws from an RngStream keyed
// by (seed, stream id). Streams can derive independent substreams from a
// 64-bit id, so per-particle and per-replication randomness is a pure
// function of the keys and never depends on thread scheduling.
#pragma once

#include <cstdint>
#include <cmath>

namespace smc {

namespace detail {

// SplitMix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

} // namespace detail

/// Combine two 64-bit values into a well-mixed derived key.
inline std::uint64_t derive_key(std::uint64_t a, std::uint64_t b) {
    return detail::mix64(a + detail::kGolden * (detail::mix64(b) | 1ULL));
}

/// Counter-based generator: output i is mix64(key + golden * i).
/// Cheap to copy; copying forks the exact sequence position.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : key_(derive_key(seed, stream_id)) {}

    static RngStream from_key(std::uint64_t key) { return RngStream(key); }

    /// Independent stream derived from this stream's key and `id`.
    /// Does not consume state; the same (stream, id) always yields the
    /// same substream.
    RngStream substream(std::uint64_t id) const {
        return RngStream(derive_key(key_ ^ 0xa5a5a5a5a5a5a5a5ULL, id));
    }

    std::uint64_t next_u64() {
        return detail::mix64(key_ + detail::kGolden * ++counter_);
    }

    /// Uniform draw in the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

  private:
    explicit RngStream(std::uint64_t key) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace smc
