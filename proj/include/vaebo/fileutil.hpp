#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vaebo::io {

std::string read_text(const std::string& path);
std::vector<std::uint8_t> read_bytes(const std::string& path);

// Writes to "<path>.tmp" and renames over the target.
void write_atomic(const std::string& path, std::string_view contents);
void write_atomic(const std::string& path, const std::vector<std::uint8_t>& contents);

class ByteWriter {
 public:
  void raw(std::string_view bytes);
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian reader that raises CorruptFile on truncation.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}
  std::string raw(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n);
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace vaebo::io
