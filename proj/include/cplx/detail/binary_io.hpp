#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cplx/errors.hpp"

namespace cplx::detail {

template <typename U>
U to_little_endian(U value) {
  static_assert(std::is_integral_v<U>);
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((value >> (8 * i)) & 0xff));
    }
    return out;
  } else {
    return value;
  }
}

/// Appends little-endian fields to a byte buffer.
class ByteWriter {
 public:
  template <typename U>
  void put(U value) {
    if constexpr (std::is_floating_point_v<U>) {
      static_assert(sizeof(U) == 4);
      put(std::bit_cast<std::uint32_t>(value));
    } else {
      const auto le = to_little_endian(value);
      const auto* p = reinterpret_cast<const char*>(&le);
      bytes_.insert(bytes_.end(), p, p + sizeof(U));
    }
  }

  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  [[nodiscard]] const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

/// Reads little-endian fields from a byte buffer, reporting the offset of any short read.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get(const char* what) {
    if constexpr (std::is_floating_point_v<U>) {
      static_assert(sizeof(U) == 4);
      return std::bit_cast<float>(get<std::uint32_t>(what));
    } else {
      require(sizeof(U), what);
      U value;
      std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
      pos_ += sizeof(U);
      return to_little_endian(value);
    }
  }

  std::string get_bytes(std::size_t n, const char* what) {
    require(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void require(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + what, pos_);
    }
  }

  [[nodiscard]] std::size_t offset() const noexcept { return pos_; }
  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace cplx::detail
