#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace medvid {

// 64-bit FNV-1a. Drives the stub embedding's hashing trick; the constants
// are part of the on-disk contract, do not change them.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

// Lowercase hex SHA-256 (OpenSSL libcrypto).
std::string sha256_hex(std::string_view bytes);

}  // namespace medvid
