#pragma once

// Dense linear-algebra helpers shared by every module: matrix exponential and
// its Frechet derivative, thin SVD, spectral norm, seeded random streams and a
// few summary statistics. Everything is templated on the scalar type; the rest
// of the library instantiates it with double.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "latwin/errors.hpp"

namespace latwin {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

template <typename Derived>
void require_square(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(what) + ": matrix is not square");
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> pade_solve(const MatrixX<Scalar>& U, const MatrixX<Scalar>& V) {
  const MatrixX<Scalar> P = V + U;
  const MatrixX<Scalar> Q = V - U;
  return Q.partialPivLu().solve(P);
}

}  // namespace detail

/// Matrix exponential by scaling and squaring with diagonal Pade approximants
/// of degree 3, 5, 7, 9 or 13, selected from the 1-norm (Higham 2005).
template <typename Derived>
MatrixX<typename Derived::Scalar> expm(const Eigen::MatrixBase<Derived>& A_in) {
  using Scalar = typename Derived::Scalar;
  using Mat = MatrixX<Scalar>;
  require_square(A_in, "expm");
  require_finite(A_in, "expm");

  const Eigen::Index n = A_in.rows();
  Mat A = A_in;
  const Mat I = Mat::Identity(n, n);
  if (n == 0) return A;
  const Scalar norm1 = A.cwiseAbs().colwise().sum().maxCoeff();

  static constexpr double theta[] = {1.495585217958292e-2, 2.539398330063230e-1,
                                     9.504178996162932e-1, 2.097847961257068e0};
  static constexpr double b3[] = {120, 60, 12, 1};
  static constexpr double b5[] = {30240, 15120, 3360, 420, 30, 1};
  static constexpr double b7[] = {17297280, 8648640, 1995840, 277200, 25200, 1512, 56, 1};
  static constexpr double b9[] = {17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                  2162160.,     110880.,     3960.,       90.,        1.};
  static constexpr double b13[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                                   1187353796428800.,  129060195264000.,   10559470521600.,
                                   670442572800.,      33522128640.,       1323241920.,
                                   40840800.,          960960.,            16380.,
                                   182.,               1.};
  const double* coeffs[] = {b3, b5, b7, b9};
  const int orders[] = {3, 5, 7, 9};

  for (int k = 0; k < 4; ++k) {
    if (norm1 <= theta[k]) {
      const int m = orders[k];
      const double* b = coeffs[k];
      const Mat A2 = A * A;
      Mat power = I;
      Mat Uodd = Scalar(b[1]) * I;
      Mat V = Scalar(b[0]) * I;
      for (int j = 2; j <= m; j += 2) {
        power = power * A2;
        V += Scalar(b[j]) * power;
        Uodd += Scalar(b[j + 1]) * power;
      }
      const Mat U = A * Uodd;
      return detail::pade_solve(U, V);
    }
  }

  constexpr double theta13 = 5.371920351148152e0;
  int s = 0;
  if (norm1 > theta13) s = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  if (s > 0) A /= std::ldexp(Scalar(1), s);

  const double* b = b13;
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  Mat inner = Scalar(b[13]) * A6 + Scalar(b[11]) * A4 + Scalar(b[9]) * A2;
  Mat Uacc = A6 * inner;
  Uacc += Scalar(b[7]) * A6 + Scalar(b[5]) * A4 + Scalar(b[3]) * A2 + Scalar(b[1]) * I;
  const Mat U = A * Uacc;
  inner = Scalar(b[12]) * A6 + Scalar(b[10]) * A4 + Scalar(b[8]) * A2;
  Mat V = A6 * inner;
  V += Scalar(b[6]) * A6 + Scalar(b[4]) * A4 + Scalar(b[2]) * A2 + Scalar(b[0]) * I;

  Mat R = detail::pade_solve(U, V);
  for (int i = 0; i < s; ++i) R = (R * R).eval();
  return R;
}

/// Frechet derivative L(A, E) = d/ds expm(A + sE) at s = 0, read off the
/// upper-right block of expm([[A, E], [0, A]]).
template <typename DerivedA, typename DerivedE>
MatrixX<typename DerivedA::Scalar> expm_frechet(const Eigen::MatrixBase<DerivedA>& A,
                                                const Eigen::MatrixBase<DerivedE>& E) {
  using Scalar = typename DerivedA::Scalar;
  require_square(A, "expm_frechet");
  if (E.rows() != A.rows() || E.cols() != A.cols())
    throw DimensionError("expm_frechet: A and E must have the same shape");
  const Eigen::Index n = A.rows();
  MatrixX<Scalar> block = MatrixX<Scalar>::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = A;
  block.topRightCorner(n, n) = E;
  block.bottomRightCorner(n, n) = A;
  const MatrixX<Scalar> big = expm(block);
  return big.topRightCorner(n, n);
}

/// expm(A) together with L(A, E); the shared block exponential is computed once.
template <typename Scalar>
struct ExpmWithFrechet {
  MatrixX<Scalar> value;
  MatrixX<Scalar> derivative;
};

template <typename DerivedA, typename DerivedE>
ExpmWithFrechet<typename DerivedA::Scalar> expm_and_frechet(const Eigen::MatrixBase<DerivedA>& A,
                                                            const Eigen::MatrixBase<DerivedE>& E) {
  using Scalar = typename DerivedA::Scalar;
  require_square(A, "expm_and_frechet");
  if (E.rows() != A.rows() || E.cols() != A.cols())
    throw DimensionError("expm_and_frechet: A and E must have the same shape");
  const Eigen::Index n = A.rows();
  MatrixX<Scalar> block = MatrixX<Scalar>::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = A;
  block.topRightCorner(n, n) = E;
  block.bottomRightCorner(n, n) = A;
  const MatrixX<Scalar> big = expm(block);
  return {big.topLeftCorner(n, n), big.topRightCorner(n, n)};
}

template <typename Scalar>
struct ThinSvd {
  MatrixX<Scalar> U;
  VectorX<Scalar> S;
  MatrixX<Scalar> V;
};

/// A = U diag(S) V^T with S descending. Backed by Eigen's bidiagonal
/// divide-and-conquer SVD.
template <typename Derived>
ThinSvd<typename Derived::Scalar> svd_thin(const Eigen::MatrixBase<Derived>& A) {
  using Scalar = typename Derived::Scalar;
  require_finite(A, "svd_thin");
  const MatrixX<Scalar> dense = A;
  Eigen::BDCSVD<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> svd(
      dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// Largest singular value by power iteration on A^T A.
template <typename Derived>
typename Derived::Scalar spectral_norm(const Eigen::MatrixBase<Derived>& A, int max_iters = 50,
                                       double tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  if (A.size() == 0) return Scalar(0);
  VectorX<Scalar> v = VectorX<Scalar>::Ones(A.cols()) / std::sqrt(Scalar(A.cols()));
  // A start vector orthogonal to the top singular vector stalls; perturb it.
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += Scalar(1e-3) * Scalar(i % 7);
  v.normalize();
  Scalar sigma = 0;
  for (int it = 0; it < max_iters; ++it) {
    VectorX<Scalar> w = A.transpose() * (A * v);
    const Scalar nw = w.norm();
    if (nw == Scalar(0)) return Scalar(0);
    const Scalar next = std::sqrt(nw);
    v = w / nw;
    if (std::abs(next - sigma) <= tol * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return (A * v).norm();
}

/// Seeded random stream: mt19937_64 for bits, Box-Muller for Gaussians.
/// Both are fully specified, so sequences agree across platforms.
class RngStream {
 public:
  static constexpr std::string_view algorithm = "mt19937_64/box-muller";

  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("rng_uniform: requires lo < hi");
    return lo + (hi - lo) * unit();
  }

  double gaussian(double mean, double std) {
    if (!(std >= 0)) throw ConfigError("rng_gaussian: requires std >= 0");
    return mean + std * standard_normal();
  }

  double standard_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - unit();  // (0, 1]
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("RngStream::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Child stream with a seed derived by splitmix64 from (seed, child).
  RngStream fork(std::uint64_t child) const {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (child + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return RngStream(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double rng_uniform(RngStream& stream, double lo, double hi) { return stream.uniform(lo, hi); }
inline double rng_gaussian(RngStream& stream, double mean, double std) {
  return stream.gaussian(mean, std);
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

/// Least-squares slope of ys against xs.
inline double least_squares_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw DimensionError("least_squares_slope: need matching spans of length >= 2");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw NumericalError("least_squares_slope: degenerate abscissae");
  return sxy / sxx;
}

inline double relative_error(const Vector& estimate, const Vector& truth) {
  const double denom = truth.norm();
  return denom > 0 ? (estimate - truth).norm() / denom : (estimate - truth).norm();
}

}  // namespace latwin
