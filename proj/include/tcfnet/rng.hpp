// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tcfnet {

// FNV-1a, the hash behind per-run seed derivation and content manifests.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 14695981039346656037ull) {
    const uint8_t* p = static_cast<const uint8_t*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
    return fnv1a(&v, sizeof(v), seed ^ 0x9e3779b97f4a7c15ull);
}

// Independent stream for (master seed, subject, session, run) so runs can be
// generated in any order or in parallel.
inline std::mt19937_64 derived_rng(uint64_t master_seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = hash_combine(master_seed, a);
    h = hash_combine(h, b);
    h = hash_combine(h, c);
    return std::mt19937_64(h);
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace tcfnet
