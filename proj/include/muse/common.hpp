#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace muse {

using Real = double;

// Error taxonomy. The CLI maps config_error to exit code 2, everything
// else to 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : error {
    using error::error;
};

struct shape_error : error {
    using error::error;
};

struct backend_unavailable : error {
    using error::error;
};

struct contract_violation : error {
    using error::error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw error(msg);
}

inline void require_cfg(bool cond, const std::string& msg) {
    if (!cond) throw config_error(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw shape_error(msg);
}

// FNV-1a, used for config hashes and image content hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), seed);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace muse
