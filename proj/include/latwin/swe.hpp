#pragma once

// Shallow-water equations on a beta-plane with reflective walls:
//   eta_t + d1((eta + H) u) + d2((eta + H) v) = 0
//   u_t - f v = -g d1 eta
//   v_t + f u = -g d2 eta,      f = f0 + beta * chi2
// Collocated cell-centred grid, second-order centred differences, TVD-RK3 in
// time. Row j of every field is the chi2 coordinate, column i is chi1.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latwin/binary_io.hpp"
#include "latwin/datasets.hpp"
#include "latwin/numkit.hpp"

namespace latwin {

struct SweConfig {
  double half_width = 5e5;
  int nx = 64;
  int ny = 64;
  double depth = 100.0;
  double gravity = 9.81;
  double f0 = 1e-4;
  double beta = 2e-11;
  double dt = 51.0;
  int steps = 600;
  double sigma_init = 5e4;

  double dx() const { return 2.0 * half_width / nx; }
  double dy() const { return 2.0 * half_width / ny; }
  double x_center(int i) const { return -half_width + (i + 0.5) * dx(); }
  double y_center(int j) const { return -half_width + (j + 0.5) * dy(); }
  double wave_speed() const;
  /// min(dx, dy) / (sqrt(g H) sqrt(2)).
  double cfl_limit() const;
  Eigen::Index state_size() const { return 3 * static_cast<Eigen::Index>(nx) * ny; }
  /// Throws ConfigError on a grid below 8x8, non-positive parameters or a CFL violation.
  void validate() const;
};

struct SweState {
  Matrix eta;
  Matrix u;
  Matrix v;
  double t = 0.0;

  static SweState zeros(const SweConfig& cfg, double t = 0.0);
  int ny() const { return static_cast<int>(eta.rows()); }
  int nx() const { return static_cast<int>(eta.cols()); }
  /// [eta, u, v], each row-major.
  Vector flatten() const;
  static SweState unflatten(const Vector& x, int ny, int nx, double t = 0.0);
  void require_finite() const;
};

/// a + s * b, fieldwise (time taken from a).
SweState axpy(const SweState& a, double s, const SweState& b);
double dot(const SweState& a, const SweState& b);

struct FieldTrajectory {
  SweConfig cfg;
  std::vector<SweState> states;

  std::size_t size() const { return states.size(); }
  FieldSeries series() const;
};

/// Gaussian surface bump centred at (mu1, mu2) with zero velocity.
SweState gaussian_bump(const SweConfig& cfg, double mu1, double mu2);
/// Bump with its centre drawn uniformly over the domain.
SweState gaussian_init(const SweConfig& cfg, std::uint64_t seed);

/// Time derivative of (eta, u, v).
SweState rhs_swe(const SweState& state, const SweConfig& cfg);

/// One TVD-RK3 step. Throws NumericalError when max|eta| exceeds 1e3.
SweState step_tvdrk3(const SweState& state, const SweConfig& cfg);

/// cfg.steps steps from gaussian_init(cfg, seed), storing every state
/// (including the initial one).
FieldTrajectory simulate(const SweConfig& cfg, std::uint64_t seed);
FieldTrajectory simulate_from(const SweConfig& cfg, const SweState& init, int steps);

/// sum(eta) dx dy.
double swe_mass(const SweState& state, const SweConfig& cfg);
/// 1/2 sum(g eta^2 + (eta + H)(u^2 + v^2)) dx dy.
double swe_energy(const SweState& state, const SweConfig& cfg);

// Tangent-linear and adjoint models of the discrete right-hand side and of one
// TVD-RK3 step, linearized about `base`.
SweState rhs_tl(const SweState& base, const SweState& dir, const SweConfig& cfg);
SweState rhs_adj(const SweState& base, const SweState& w, const SweConfig& cfg);
SweState step_tl(const SweState& base, const SweState& dir, const SweConfig& cfg);
SweState step_adj(const SweState& base, const SweState& w, const SweConfig& cfg);

/// "LTWF" snapshot: version, Ny, Nx, t, then eta, u, v.
void write_snapshot(io::Writer& w, const SweState& s);
SweState read_snapshot(io::Reader& r);
void save_snapshot(const std::filesystem::path& path, const SweState& s);
SweState load_snapshot(const std::filesystem::path& path);
/// u64 count followed by that many snapshots.
void save_field_trajectory(const std::filesystem::path& path, const std::vector<SweState>& states);
std::vector<SweState> load_field_trajectory(const std::filesystem::path& path);

}  // namespace latwin
