#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tfbs/errors.hpp"

// Little-endian primitives shared by the embedding and checkpoint formats.
namespace tfbs::binio {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

inline void write_f32(std::ostream& out, float f) { write_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, std::streamsize(n));
    if (std::size_t(in.gcount()) != n) throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    read_exact(in, reinterpret_cast<char*>(b), 4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline float read_f32(std::istream& in, const char* what) {
    return std::bit_cast<float>(read_u32(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
    char got[8];
    in.read(got, 8);
    if (in.gcount() != 8 || std::memcmp(got, magic, 8) != 0)
        throw FormatError(std::string("bad magic bytes, expected ") + magic);
}

inline void expect_eof(std::istream& in) {
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
}

}  // namespace tfbs::binio
