#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace clab {

/// Seeded random source. Wraps std::mt19937_64 but generates uniform and
/// normal variates through fixed arithmetic so that streams are reproducible
/// across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return (next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f() { return static_cast<float>(uniform()); }

    /// Integer in [0, n). n must be > 0.
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    float normal_f() { return static_cast<float>(normal()); }

    bool coin() { return (next_u64() & 1u) != 0; }

    /// Derives an independent stream for a named sub-task. Deterministic in
    /// (parent seed, tag).
    Rng fork(const std::string& tag) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : tag) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        uint64_t s = next_u64() ^ h;
        // splitmix64 finalizer to decorrelate
        s += 0x9e3779b97f4a7c15ull;
        s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ull;
        s = (s ^ (s >> 27)) * 0x94d049bb133111ebull;
        return Rng(s ^ (s >> 31));
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a over a byte range; used for cache keys and artifact hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace clab
