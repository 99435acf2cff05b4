#pragma once

#include <filesystem>
#include <string>

#include "latwin/numkit.hpp"

namespace testing {

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "latwin_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline latwin::Matrix random_matrix(latwin::RngStream& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  latwin::Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.standard_normal();
  return m;
}

inline latwin::Vector random_vector(latwin::RngStream& rng, Eigen::Index n, double scale = 1.0) {
  latwin::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.standard_normal();
  return v;
}

}  // namespace testing
