#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latwin/errors.hpp"
#include "latwin/numkit.hpp"

using namespace latwin;

TEST_SUITE("numkit") {
  TEST_CASE("expm of zero and diagonal matrices") {
    CHECK(expm(Matrix::Zero(3, 3)).isApprox(Matrix::Identity(3, 3), 1e-15));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = 2.0;
    const Matrix e = expm(d);
    CHECK(e(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
    CHECK(e(1, 1) == doctest::Approx(std::exp(2.0)).epsilon(1e-14));
    CHECK(std::abs(e(0, 1)) < 1e-15);
  }

  TEST_CASE("expm of the harmonic generator matches the rotation formula") {
    const double t = 0.3;
    const Matrix M{{0.0, 1.0}, {-4.0, 0.0}};
    const Matrix oracle{{std::cos(2 * t), 0.5 * std::sin(2 * t)}, {-2 * std::sin(2 * t), std::cos(2 * t)}};
    CHECK((expm(Matrix(t * M)) - oracle).norm() < 1e-14);
  }

  TEST_CASE("expm handles large norms through scaling and squaring") {
    const Matrix M{{0.0, 1.0}, {-4.0, 0.0}};
    const double t = 40.0;
    const Matrix oracle{{std::cos(2 * t), 0.5 * std::sin(2 * t)}, {-2 * std::sin(2 * t), std::cos(2 * t)}};
    CHECK((expm(Matrix(t * M)) - oracle).norm() < 1e-11);
  }

  TEST_CASE("expm rejects non-square and non-finite input") {
    CHECK_THROWS_AS(expm(Matrix::Zero(2, 3)), DimensionError);
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(expm(bad), NumericalError);
  }

  TEST_CASE("Frechet derivative special cases") {
    RngStream rng(3);
    const Matrix E = testing::random_matrix(rng, 3, 3);
    CHECK((expm_frechet(Matrix::Zero(3, 3), E) - E).norm() < 1e-14);
    const Vector a{{0.3, -1.0, 0.7}}, e{{2.0, 0.5, -1.5}};
    const Matrix L = expm_frechet(Matrix(a.asDiagonal()), Matrix(e.asDiagonal()));
    for (int i = 0; i < 3; ++i) CHECK(L(i, i) == doctest::Approx(e(i) * std::exp(a(i))).epsilon(1e-13));
  }

  TEST_CASE("Frechet derivative matches central differences") {
    RngStream rng(11);
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix A = testing::random_matrix(rng, 3, 3);
      const Matrix E = testing::random_matrix(rng, 3, 3);
      const double h = 1e-6;
      const Matrix fd = (expm(Matrix(A + h * E)) - expm(Matrix(A - h * E))) / (2 * h);
      const Matrix L = expm_frechet(A, E);
      CHECK((L - fd).norm() / L.norm() < 1e-6);
      const auto both = expm_and_frechet(A, E);
      CHECK((both.value - expm(A)).norm() < 1e-12 * expm(A).norm());
      CHECK((both.derivative - L).norm() < 1e-12 * L.norm());
    }
  }

  TEST_CASE("thin SVD") {
    const auto id = svd_thin(Matrix::Identity(3, 3));
    CHECK((id.S - Vector::Ones(3)).norm() < 1e-15);
    const Vector u{{1.0, 2.0, 2.0}}, v{{3.0, 4.0}};
    const auto r1 = svd_thin(Matrix(u * v.transpose()));
    CHECK(r1.S(0) == doctest::Approx(u.norm() * v.norm()).epsilon(1e-14));
    CHECK(std::abs(r1.S(1)) < 1e-14);
    RngStream rng(5);
    const Matrix A = testing::random_matrix(rng, 8, 5);
    const auto s = svd_thin(A);
    CHECK((s.U * s.S.asDiagonal() * s.V.transpose() - A).norm() < 1e-10);
    for (Eigen::Index i = 1; i < s.S.size(); ++i) CHECK(s.S(i) <= s.S(i - 1));
  }

  TEST_CASE("spectral norm agrees with the largest singular value") {
    RngStream rng(8);
    const Matrix A = testing::random_matrix(rng, 6, 4);
    CHECK(spectral_norm(A) == doctest::Approx(svd_thin(A).S(0)).epsilon(1e-8));
  }

  TEST_CASE("rng determinism and moments") {
    RngStream a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    RngStream g(1);
    CHECK(rng_gaussian(g, 2.5, 0.0) == 2.5);
    RngStream u(7);
    double sum = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) sum += rng_uniform(u, 0.0, 1.0);
    CHECK(std::abs(sum / n - 0.5) < 0.002);
    RngStream z(9);
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < 200000; ++i) {
      const double x = z.standard_normal();
      s1 += x;
      s2 += x * x;
    }
    CHECK(std::abs(s1 / 200000) < 0.01);
    CHECK(std::abs(s2 / 200000 - 1.0) < 0.02);
  }

  TEST_CASE("rng forks are reproducible and distinct") {
    const RngStream base(42);
    CHECK(base.fork(1).seed() == RngStream(42).fork(1).seed());
    CHECK(base.fork(1).seed() != base.fork(2).seed());
    CHECK_THROWS_AS(RngStream(1).uniform(1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(RngStream(1).below(0), ConfigError);
  }

  TEST_CASE("least squares slope") {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
    CHECK(least_squares_slope(x, y) == doctest::Approx(2.0));
    const std::vector<double> flat{1, 1, 1};
    CHECK_THROWS_AS(least_squares_slope(flat, flat), NumericalError);
  }
}
