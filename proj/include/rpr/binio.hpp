// Little-endian binary stream helpers for the on-disk formats.
#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace rpr::io {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  auto u = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>(u & 0xff);
    u >>= 8;
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of stream");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    u = static_cast<std::make_unsigned_t<T>>(u << 8) | bytes[i];
  }
  return static_cast<T>(u);
}

inline void write_f32(std::ostream& os, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  write_le<std::uint32_t>(os, bits);
}

inline float read_f32(std::istream& is) {
  const std::uint32_t bits = read_le<std::uint32_t>(is);
  float value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5],
                         const std::string& what) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error("bad magic in " + what);
  }
}

}  // namespace rpr::io
