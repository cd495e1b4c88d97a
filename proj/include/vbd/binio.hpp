#pragma once

// Little-endian binary helpers shared by the tensor, feature and model containers.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace vbd::binio {

template <typename U>
inline U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
    return r;
  }
  return v;
}

template <typename U>
inline void write_le(std::ostream& out, U v) {
  v = to_little(v);
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.write(buf, sizeof(U));
}

template <typename U>
inline U read_le(std::istream& in) {
  char buf[sizeof(U)];
  if (!in.read(buf, sizeof(U))) throw std::runtime_error("unexpected end of binary stream");
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return to_little(v);
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }

inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }
inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error(std::string("bad magic, expected ") + magic);
}

}  // namespace vbd::binio
