#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "xoct/error.hpp"

namespace xoct::io {

/// Appends fixed-width little-endian values to a byte buffer.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
    std::uint64_t u;
    if constexpr (std::is_same_v<T, double>)
      u = std::bit_cast<std::uint64_t>(v);
    else
      u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }

  const std::string& str() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader; every failure reports its byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>)
      return std::bit_cast<double>(u);
    else
      return static_cast<T>(u);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      throw ParseError(std::string("truncated input while reading ") + what, pos_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Whole-file helpers. Throw Error on I/O failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace xoct::io
