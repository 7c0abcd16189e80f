#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace semsec {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidShape : Error {
    using Error::Error;
};
struct DegenerateSignal : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};
struct SingularChannel : Error {
    using Error::Error;
};
struct AttackDiverged : Error {
    using Error::Error;
};
struct MissingLabels : Error {
    using Error::Error;
};
struct EmptyDataset : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

/// Training hit a non-finite loss. Carries the path of the last checkpoint
/// that was still finite (empty if divergence happened before the first save).
struct TrainingDiverged : Error {
    std::string last_good_checkpoint;
    TrainingDiverged(const std::string& msg, std::string ckpt)
        : Error(msg), last_good_checkpoint(std::move(ckpt)) {}
};

/// Identity model failed its accuracy gate. Carries the measured accuracy.
struct GateNotMet : Error {
    double accuracy;
    GateNotMet(const std::string& msg, double acc) : Error(msg), accuracy(acc) {}
};

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}
} // namespace detail

/// Derives an independent RNG seed for a named substream of a master seed.
/// Used so that every stage / grid cell owns its own deterministic stream.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view tag) {
    return detail::splitmix64(master ^ detail::fnv1a(tag));
}

inline Rng substream_rng(std::uint64_t master, std::string_view tag) {
    return Rng(substream_seed(master, tag));
}

} // namespace semsec
