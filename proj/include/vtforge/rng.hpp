#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace vtforge {

// 64-bit FNV-1a. Used for stream keys, config fingerprints and file hashes.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t state = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        state ^= p[i];
        state *= 0x100000001b3ull;
    }
    return state;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t state = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), state);
}

// splitmix64 finalizer
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Counter-based generator: draw i of stream (seed, stream) is a pure function
// of (seed, stream, i). Independent streams never interact, so draw order
// across call sites cannot change any value.
class CounterRng {
   public:
    CounterRng(uint64_t seed, uint64_t stream) : key_(mix64(mix64(seed) ^ stream)) {}

    // in [0, 1)
    double uniform_at(uint64_t i) const {
        return static_cast<double>(mix64(key_ ^ (i + 0x632be59bd9b4e019ull)) >> 11) * 0x1.0p-53;
    }

    // standard normal via Box-Muller on counters (2i, 2i+1)
    double normal_at(uint64_t i) const {
        double u1 = 1.0 - uniform_at(2 * i);  // (0, 1]
        double u2 = uniform_at(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi_ * u2);
    }

    double uniform() { return uniform_at(uniform_counter_++); }
    double normal() { return normal_at(normal_counter_++); }

   private:
    static constexpr double kTwoPi_ = 6.283185307179586476925286766559;
    uint64_t key_;
    uint64_t uniform_counter_ = 0;
    uint64_t normal_counter_ = 0;
};

}  // namespace vtforge
