#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace permutofilt::detail {

constexpr std::uint32_t bswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}

inline void store_u32_le(std::ostream& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t load_u32_le(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
  return v;
}

inline void store_f32_le(std::ostream& out, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  store_u32_le(out, bits);
}

inline float load_f32_le(std::istream& in) {
  const std::uint32_t bits = load_u32_le(in);
  float v = 0.0f;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace permutofilt::detail
