#include "pgx/rng.hpp"

#include <cmath>
#include <sstream>

#include "pgx/errors.hpp"

namespace pgx {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u in (0, 1] so the log is finite.
    const double u = 1.0 - uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * 3.14159265358979323846 * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mu, double sigma) { return mu + sigma * normal(); }

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ValidationError("Rng::index requires n > 0");
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

long long Rng::uniform_int(long long lo, long long hi) {
    if (hi < lo) throw ValidationError("Rng::uniform_int requires lo <= hi");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long long>(index(static_cast<std::size_t>(span)));
}

Rng Rng::child(std::string_view tag) const {
    return Rng(mix64(seed_, fnv1a(tag)));
}

Rng Rng::child(std::uint64_t tag) const { return Rng(mix64(seed_, tag)); }

std::string Rng::serialize() const {
    std::ostringstream out;
    out << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
    out.precision(17);
    out << spare_ << ' ' << engine_;
    return out.str();
}

Rng Rng::deserialize(const std::string& text) {
    std::istringstream in(text);
    std::uint64_t seed = 0;
    int has_spare = 0;
    double spare = 0.0;
    Rng rng(0);
    if (!(in >> seed >> has_spare >> spare >> rng.engine_)) {
        throw ValidationError("malformed RNG state");
    }
    rng.seed_ = seed;
    rng.has_spare_ = has_spare != 0;
    rng.spare_ = spare;
    return rng;
}

bool Rng::operator==(const Rng& other) const {
    return seed_ == other.seed_ && engine_ == other.engine_ &&
           has_spare_ == other.has_spare_ &&
           (!has_spare_ || spare_ == other.spare_);
}

}  // namespace pgx
