#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace splitlab {

// Deterministic generator with a fixed bit-level recipe (splitmix64 core,
// Box-Muller normals) so seeded runs reproduce byte-for-byte regardless of
// the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal (Box-Muller, spare cached).
    double normal();
    double normal(double mean, double stddev);

    // Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n);

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Decorrelated child seed for a named substream.
    std::uint64_t fork(std::uint64_t stream) const;

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// One splitmix64 step of a value; used for deriving per-cell seeds.
std::uint64_t mix64(std::uint64_t x);

} // namespace splitlab
