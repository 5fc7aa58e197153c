#pragma once

// Little-endian stream primitives shared by the binary file formats. Short
// reads surface as TruncatedFile so format readers can stay linear.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "bandmatch/common.hpp"

namespace bandmatch::detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n,
                      const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    fail("TruncatedFile", "unexpected end of file while reading " + what);
  }
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t lo = get_u32(is, what);
  std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& is, const std::string& what) {
  return std::bit_cast<float>(get_u32(is, what));
}

inline void put_magic(std::ostream& os, const char tag[4]) { put_bytes(os, tag, 4); }

inline void expect_magic(std::istream& is, const char* tag, const std::string& what) {
  char got[4];
  get_bytes(is, got, 4, what + " magic");
  if (std::memcmp(got, tag, 4) != 0) {
    fail("FormatError", what + ": bad magic, expected \"" + std::string(tag, 4) + "\"");
  }
}

}  // namespace bandmatch::detail
