#pragma once

// Little-endian byte packing shared by the binary file writers and readers.
// Internal to the library sources; the public formats are documented on the
// save/load functions that use this.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pgx/errors.hpp"

namespace pgx::detail {

inline void append_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void append_u32(std::string& s, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        s.push_back(static_cast<char>((v >> shift) & 0xff));
    }
}

inline void append_u64(std::string& s, std::uint64_t v) {
    for (int shift = 0; shift < 64; shift += 8) {
        s.push_back(static_cast<char>((v >> shift) & 0xff));
    }
}

inline void append_f32(std::string& s, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    append_u32(s, bits);
}

inline void append_f64(std::string& s, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    append_u64(s, bits);
}

// Cursor over a loaded file; every read is bounds-checked so corruption
// surfaces as a typed error instead of garbage values.
struct ByteReader {
    const std::string& bytes;
    std::string label;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw IoError("truncated payload in " + label);
        }
    }
    std::uint16_t u16() {
        need(2);
        const auto b0 = static_cast<std::uint8_t>(bytes[pos]);
        const auto b1 = static_cast<std::uint8_t>(bytes[pos + 1]);
        pos += 2;
        return static_cast<std::uint16_t>(b0 | (b1 << 8));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(
                     static_cast<std::uint8_t>(bytes[pos + i]))
                 << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(
                     static_cast<std::uint8_t>(bytes[pos + i]))
                 << (8 * i);
        }
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void write_file(const std::filesystem::path& path,
                       const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

}  // namespace pgx::detail
