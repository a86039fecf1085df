#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace datr::io {

// Little-endian encoder into a growable byte buffer.
class ByteWriter {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v);
  void f64(double v);
  // u32 length prefix followed by the raw bytes.
  void string(std::string_view s);

  const std::string& buffer() const { return buf_; }
  std::string release() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

// Little-endian decoder. Every failure throws FormatError naming the byte
// offset at which the missing or invalid field starts.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  void expect_magic(std::string_view magic);
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(take(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  float f32();
  double f64();
  std::string string();
  std::string_view raw(std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }
  // Throws FormatError at the current offset.
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::uint64_t take(std::size_t width);
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
// Writes via a sibling temp file and rename, so readers never see a partial file.
void write_file(const std::string& path, std::string_view contents);

using Digest = std::array<std::uint8_t, 32>;
Digest sha256(std::string_view data);
std::string to_hex(const Digest& digest);

}  // namespace datr::io
