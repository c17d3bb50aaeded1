#pragma once

// Little-endian primitive encoding shared by the FEEG, FEGP and FCKP formats.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "fome/error.hpp"

namespace fome::io {

template <typename UInt>
void put_le(std::ostream& os, UInt v) {
    std::array<char, sizeof(UInt)> bytes{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    os.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& is, const char* what) {
    std::array<unsigned char, sizeof(UInt)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(std::string("truncated input while reading ") + what);
    }
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(bytes[i]) << (8 * i);
    }
    return v;
}

inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

inline float get_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(get_le<std::uint32_t>(is, what));
}
inline double get_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

/// Reads exactly four magic bytes; returns false on a clean EOF before any
/// byte, throws FormatError on a partial or mismatching magic.
inline bool expect_magic(std::istream& is, const char (&magic)[5], const char* format) {
    char got[4]{};
    is.read(got, 4);
    if (is.gcount() == 0 && is.eof()) return false;
    if (is.gcount() != 4 || std::string(got, 4) != std::string(magic, 4)) {
        throw FormatError(std::string("bad magic for ") + format);
    }
    return true;
}

}  // namespace fome::io
