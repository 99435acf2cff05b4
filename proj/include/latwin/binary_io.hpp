#pragma once

// Little-endian binary encoding shared by all on-disk formats.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "latwin/numkit.hpp"

namespace latwin::io {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);

  void magic(std::string_view tag);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(const double* data, std::size_t n);
  void vector(const Vector& v) { f64s(v.data(), static_cast<std::size_t>(v.size())); }
  void matrix(const Matrix& m) { f64s(m.data(), static_cast<std::size_t>(m.size())); }
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  /// Throws IoError when the next four bytes differ from `tag`.
  void expect_magic(std::string_view tag);
  std::string peek_magic();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(double* data, std::size_t n);
  Vector vector(Eigen::Index n);
  Matrix matrix(Eigen::Index rows, Eigen::Index cols);
  bool at_end();
  std::uint64_t remaining();

 private:
  void read_bytes(unsigned char* dst, std::size_t n);

  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
};

}  // namespace latwin::io
