#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdcot {

// Raised on contract violations (bad shapes, invalid config, malformed input).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a computation goes wrong at runtime (non-finite values, I/O).
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. Wraps mt19937_64 but generates normals and bounded
// integers through fully specified code paths so streams are stable across
// standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return (next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) throw ValidationError("Rng::below: n must be positive");
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller (the cached spare keeps cost down).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a over raw bytes; used for content hashes of tokenizers and parameters.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hash_to_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// Half-up rounding to two decimals, matching the report formatting convention.
inline double round2(double v) {
    return std::floor(v * 100.0 + 0.5) / 100.0;
}

}  // namespace kdcot
