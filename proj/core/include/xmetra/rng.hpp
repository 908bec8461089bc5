#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace xmetra {

// Self-contained deterministic RNG (splitmix64 core). Standard-library
// distributions are avoided on purpose: their output is implementation
// defined, and experiment reruns must be byte-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Independent stream derived from (seed, stream index).
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller (caches the spare draw).
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // k distinct indices drawn from [0, n), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// One splitmix64 scrambling step; also used for seed derivation chains.
std::uint64_t mix64(std::uint64_t x);
// Combine two seeds into one stream id.
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);
// Stable 64-bit hash of a tag string (FNV-1a), for naming rng streams.
std::uint64_t seed_tag(std::string_view tag);

}  // namespace xmetra
