#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xlkd::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes to "<path>.tmp" and renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64(std::string_view bytes);

// Little-endian byte appenders / cursor reader.
void put_u8(std::string& out, std::uint8_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_i32(std::string& out, std::int32_t v);
void put_f64(std::string& out, double v);

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  double f64();
  std::string_view take(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  // Reads up to and excluding '\n'; consumes the newline.
  std::string_view line();

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

// Binary PGM ("P5", maxval 255); pixels quantized round(p * 255) clamped.
std::string encode_pgm(std::span<const double> pixels, std::size_t side);

}  // namespace xlkd::io
