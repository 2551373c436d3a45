#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dsrnet/errors.hpp"

namespace dsrnet::io {

// Little-endian fixed-width primitives. x86-64 only in practice; the static
// assert below keeps a big-endian port honest.
static_assert(sizeof(double) == 8, "64-bit IEEE doubles required");

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated stream (u32)");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_i64(std::ostream& os, int64_t v) {
    auto u = static_cast<uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline int64_t read_i64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated stream (i64)");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    return static_cast<int64_t>(u);
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const uint32_t n = read_u32(is);
    if (n > (1u << 28)) throw CheckpointError("corrupt stream: absurd string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw CheckpointError("truncated stream (string)");
    return s;
}

inline void write_doubles(std::ostream& os, const double* p, int64_t n) {
    // bit-exact round trip: raw IEEE-754 little-endian payload
    for (int64_t i = 0; i < n; ++i) {
        uint64_t u;
        std::memcpy(&u, p + i, 8);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

inline void read_doubles(std::istream& is, double* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8))
            throw CheckpointError("truncated stream (payload)");
        uint64_t u = 0;
        for (int k = 0; k < 8; ++k) u |= static_cast<uint64_t>(b[k]) << (8 * k);
        std::memcpy(p + i, &u, 8);
    }
}

} // namespace dsrnet::io
