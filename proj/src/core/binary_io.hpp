// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary encoding helpers shared by the dataset bundle and the
// checkpoint format. Every file ends with a CRC-32 of the preceding bytes.
#pragma once

#include "core/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

namespace testam {

namespace detail {
template <class T>
using UnsignedOf = std::conditional_t<
    sizeof(T) == 8, std::uint64_t,
    std::conditional_t<sizeof(T) == 4, std::uint32_t,
                       std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                          std::uint8_t>>>;
} // namespace detail

class BinaryWriter {
public:
  template <class T> void put(T v) {
    static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
    using U = detail::UnsignedOf<T>;
    const U bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void bytes(const void *p, std::size_t n) {
    const char *c = static_cast<const char *>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char> &data() const { return buf_; }

private:
  std::vector<char> buf_;
};

class BinaryReader {
public:
  BinaryReader(const std::vector<char> &buf, std::size_t limit)
      : buf_(buf), limit_(limit) {}

  template <class T> T get() {
    using U = detail::UnsignedOf<T>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_)
      fail(ErrorKind::Format, "checksum failure");
  }
  const std::vector<char> &buf_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc_of(const char *data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef *>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<char> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::Io, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path &path,
                       const std::vector<char> &data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out)
    fail(ErrorKind::Io, "write failed: " + path.string());
}

} // namespace testam
