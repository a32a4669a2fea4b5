#include "xlkd/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xlkd::io {

void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::string_view bytes) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, bytes.data(), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u32(std::string& out, std::uint32_t v) { put_le(out, v); }
void put_u64(std::string& out, std::uint64_t v) { put_le(out, v); }
void put_i32(std::string& out, std::int32_t v) { put_le(out, v); }
void put_f64(std::string& out, double v) { put_le(out, v); }

std::string_view Reader::take(std::size_t n) {
  if (n > remaining()) throw IoError("unexpected end of data");
  auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(take(1)[0]); }
std::uint32_t Reader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t Reader::u64() { return get_le<std::uint64_t>(take(8)); }
std::int32_t Reader::i32() { return get_le<std::int32_t>(take(4)); }
double Reader::f64() { return get_le<double>(take(8)); }

std::string_view Reader::line() {
  const auto nl = bytes_.find('\n', pos_);
  if (nl == std::string_view::npos) throw IoError("unterminated header line");
  auto s = bytes_.substr(pos_, nl - pos_);
  pos_ = nl + 1;
  return s;
}

std::string encode_pgm(std::span<const double> pixels, std::size_t side) {
  if (pixels.size() != side * side) throw IoError("encode_pgm: pixel count does not match side");
  std::string out = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  for (double p : pixels) {
    const double q = std::clamp(std::round(p * 255.0), 0.0, 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

}  // namespace xlkd::io
