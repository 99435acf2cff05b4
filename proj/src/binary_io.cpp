#include "latwin/binary_io.hpp"

#include <bit>
#include <cstring>

namespace latwin::io {

namespace {

template <typename T>
void to_le(T v, unsigned char* out) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out, raw, sizeof(T));
  } else {
    for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = raw[sizeof(T) - 1 - i];
  }
}

template <typename T>
T from_le(const unsigned char* in) {
  unsigned char raw[sizeof(T)];
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(raw, in, sizeof(T));
  } else {
    for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = in[sizeof(T) - 1 - i];
  }
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

}  // namespace

Writer::Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw IoError("cannot open for writing: " + path.string());
}

void Writer::magic(std::string_view tag) {
  if (tag.size() != 4) throw IoError("magic tags are four bytes");
  out_.write(tag.data(), 4);
}

void Writer::u32(std::uint32_t v) {
  unsigned char b[4];
  to_le(v, b);
  out_.write(reinterpret_cast<const char*>(b), 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char b[8];
  to_le(v, b);
  out_.write(reinterpret_cast<const char*>(b), 8);
}

void Writer::f64(double v) {
  unsigned char b[8];
  to_le(v, b);
  out_.write(reinterpret_cast<const char*>(b), 8);
}

void Writer::f64s(const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) f64(data[i]);
  }
}

void Writer::close() {
  out_.flush();
  if (!out_) throw IoError("write failed: " + path_.string());
  out_.close();
}

Reader::Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open for reading: " + path.string());
  in_.seekg(0, std::ios::end);
  size_ = static_cast<std::uint64_t>(in_.tellg());
  in_.seekg(0, std::ios::beg);
}

void Reader::read_bytes(unsigned char* dst, std::size_t n) {
  in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n)
    throw IoError("truncated file: " + path_.string());
}

std::string Reader::peek_magic() {
  const auto pos = in_.tellg();
  char tag[4] = {0, 0, 0, 0};
  in_.read(tag, 4);
  const bool ok = in_.gcount() == 4;
  in_.clear();
  in_.seekg(pos);
  return ok ? std::string(tag, 4) : std::string();
}

void Reader::expect_magic(std::string_view tag) {
  unsigned char got[4];
  read_bytes(got, 4);
  if (std::memcmp(got, tag.data(), 4) != 0)
    throw IoError("bad magic in " + path_.string() + ", expected " + std::string(tag));
}

std::uint32_t Reader::u32() {
  unsigned char b[4];
  read_bytes(b, 4);
  return from_le<std::uint32_t>(b);
}

std::uint64_t Reader::u64() {
  unsigned char b[8];
  read_bytes(b, 8);
  return from_le<std::uint64_t>(b);
}

double Reader::f64() {
  unsigned char b[8];
  read_bytes(b, 8);
  return from_le<double>(b);
}

void Reader::f64s(double* data, std::size_t n) {
  if (n * 8 > remaining()) throw IoError("truncated file: " + path_.string());
  if constexpr (std::endian::native == std::endian::little) {
    read_bytes(reinterpret_cast<unsigned char*>(data), n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = f64();
  }
}

Vector Reader::vector(Eigen::Index n) {
  Vector v(n);
  f64s(v.data(), static_cast<std::size_t>(n));
  return v;
}

Matrix Reader::matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  f64s(m.data(), static_cast<std::size_t>(rows * cols));
  return m;
}

std::uint64_t Reader::remaining() {
  const auto pos = static_cast<std::uint64_t>(in_.tellg());
  return size_ - pos;
}

bool Reader::at_end() { return remaining() == 0; }

}  // namespace latwin::io
