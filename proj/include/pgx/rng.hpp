#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pgx {

// splitmix64 finalizer; used to derive child-stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// Deterministic random stream. Distributions are implemented here rather
// than with std::*_distribution so that a given seed produces identical
// streams on every platform. Child streams are derived from the original
// seed, independent of how much the parent has consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // [0, 1)
    double uniform();
    // N(0,1), Box-Muller with a cached spare.
    double normal();
    double normal(double mu, double sigma);

    // [0, n); n > 0
    std::size_t index(std::size_t n);
    // [lo, hi] inclusive
    long long uniform_int(long long lo, long long hi);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    Rng child(std::string_view tag) const;
    Rng child(std::uint64_t tag) const;

    std::uint64_t seed() const { return seed_; }

    // Full-state round trip, used by checkpoints.
    std::string serialize() const;
    static Rng deserialize(const std::string& text);

    bool operator==(const Rng& other) const;

private:
    std::uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pgx
