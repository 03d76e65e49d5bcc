// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian byte encoding shared by the tensor and checkpoint formats,
// plus write-to-temp-then-rename file output.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "smatch/errors.hpp"

namespace smatch::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits, 4);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits, 8);
  }
  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

// Reads with bounds checks; a short read throws FormatError at the offset
// where the missing field starts.
class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n)
      throw FormatError("truncated input reading " + std::string(what), pos_);
  }
  std::string str(std::size_t n, std::string_view what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(std::string_view what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(std::string_view what) { return le(8, what); }
  float f32(std::string_view what) {
    const auto bits = static_cast<std::uint32_t>(le(4, what));
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64(std::string_view what) {
    const std::uint64_t bits = le(8, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

 private:
  std::uint64_t le(int n, std::string_view what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

// Throws InputError if the file cannot be opened.
std::vector<unsigned char> read_file(const std::string& path);
// Writes to "<path>.tmp" and renames over path; nothing is left behind on failure.
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
inline void write_file_atomic(const std::string& path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

}  // namespace smatch::detail
