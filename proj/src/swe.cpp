#include "latwin/swe.hpp"

#include <cmath>

#include "swe_stencil.hpp"

namespace latwin {

double SweConfig::wave_speed() const { return std::sqrt(gravity * depth); }

double SweConfig::cfl_limit() const { return std::min(dx(), dy()) / (wave_speed() * std::sqrt(2.0)); }

void SweConfig::validate() const {
  if (nx < 8 || ny < 8) throw ConfigError("SweConfig: grid must be at least 8x8");
  if (!(half_width > 0 && depth > 0 && gravity > 0 && dt > 0 && sigma_init > 0))
    throw ConfigError("SweConfig: half-width, depth, gravity, dt and sigma must be positive");
  if (steps < 0) throw ConfigError("SweConfig: steps must be >= 0");
  if (dt > cfl_limit())
    throw ConfigError("SweConfig: dt = " + std::to_string(dt) + " s exceeds the CFL limit " +
                      std::to_string(cfl_limit()) + " s");
}

SweState SweState::zeros(const SweConfig& cfg, double t) {
  SweState s;
  s.eta = Matrix::Zero(cfg.ny, cfg.nx);
  s.u = Matrix::Zero(cfg.ny, cfg.nx);
  s.v = Matrix::Zero(cfg.ny, cfg.nx);
  s.t = t;
  return s;
}

Vector SweState::flatten() const {
  const Eigen::Index n = eta.size();
  Vector x(3 * n);
  x.segment(0, n) = Eigen::Map<const Vector>(eta.data(), n);
  x.segment(n, n) = Eigen::Map<const Vector>(u.data(), n);
  x.segment(2 * n, n) = Eigen::Map<const Vector>(v.data(), n);
  return x;
}

SweState SweState::unflatten(const Vector& x, int ny, int nx, double t) {
  const Eigen::Index n = static_cast<Eigen::Index>(ny) * nx;
  if (x.size() != 3 * n) throw DimensionError("SweState::unflatten: expected " + std::to_string(3 * n) + " values");
  SweState s;
  s.eta = Eigen::Map<const Matrix>(x.data(), ny, nx);
  s.u = Eigen::Map<const Matrix>(x.data() + n, ny, nx);
  s.v = Eigen::Map<const Matrix>(x.data() + 2 * n, ny, nx);
  s.t = t;
  return s;
}

void SweState::require_finite() const {
  if (!eta.allFinite() || !u.allFinite() || !v.allFinite()) throw NumericalError("SweState: non-finite field");
}

SweState axpy(const SweState& a, double s, const SweState& b) {
  SweState r;
  r.eta = a.eta + s * b.eta;
  r.u = a.u + s * b.u;
  r.v = a.v + s * b.v;
  r.t = a.t;
  return r;
}

double dot(const SweState& a, const SweState& b) {
  return a.eta.cwiseProduct(b.eta).sum() + a.u.cwiseProduct(b.u).sum() + a.v.cwiseProduct(b.v).sum();
}

FieldSeries FieldTrajectory::series() const {
  FieldSeries fs;
  for (const auto& s : states) {
    fs.times.push_back(s.t);
    fs.states.push_back(s.flatten());
  }
  return fs;
}

SweState gaussian_bump(const SweConfig& cfg, double mu1, double mu2) {
  SweState s = SweState::zeros(cfg);
  const double two_s2 = 2.0 * cfg.sigma_init * cfg.sigma_init;
  for (int j = 0; j < cfg.ny; ++j) {
    const double dy = cfg.y_center(j) - mu2;
    for (int i = 0; i < cfg.nx; ++i) {
      const double dx = cfg.x_center(i) - mu1;
      s.eta(j, i) = std::exp(-(dx * dx + dy * dy) / two_s2);
    }
  }
  return s;
}

SweState gaussian_init(const SweConfig& cfg, std::uint64_t seed) {
  RngStream rng(seed);
  const double mu1 = rng.uniform(-cfg.half_width, cfg.half_width);
  const double mu2 = rng.uniform(-cfg.half_width, cfg.half_width);
  return gaussian_bump(cfg, mu1, mu2);
}

SweState rhs_swe(const SweState& s, const SweConfig& cfg) {
  using namespace stencil;
  s.require_finite();
  const int ny = s.ny(), nx = s.nx();
  const double H = cfg.depth, g = cfg.gravity;
  Matrix fx = (s.eta.array() + H).matrix().cwiseProduct(s.u);
  Matrix fy = (s.eta.array() + H).matrix().cwiseProduct(s.v);
  SweState d = SweState::zeros(cfg, s.t);
  const Grid grid{ny, nx, cfg.dx(), cfg.dy()};
  for (int j = 0; j < ny; ++j) {
    const double f = cfg.f0 + cfg.beta * cfg.y_center(j);
    for (int i = 0; i < nx; ++i) {
      d.eta(j, i) = -(ddx(fx, grid, j, i, kOdd) + ddy(fy, grid, j, i, kOdd));
      d.u(j, i) = f * s.v(j, i) - g * ddx(s.eta, grid, j, i, kEven);
      d.v(j, i) = -f * s.u(j, i) - g * ddy(s.eta, grid, j, i, kEven);
    }
  }
  return d;
}

SweState step_tvdrk3(const SweState& s, const SweConfig& cfg) {
  const double dt = cfg.dt;
  const SweState s1 = axpy(s, dt, rhs_swe(s, cfg));
  const SweState s1b = axpy(s1, dt, rhs_swe(s1, cfg));
  SweState s2;
  s2.eta = 0.75 * s.eta + 0.25 * s1b.eta;
  s2.u = 0.75 * s.u + 0.25 * s1b.u;
  s2.v = 0.75 * s.v + 0.25 * s1b.v;
  const SweState s2b = axpy(s2, dt, rhs_swe(s2, cfg));
  SweState out;
  out.eta = s.eta / 3.0 + (2.0 / 3.0) * s2b.eta;
  out.u = s.u / 3.0 + (2.0 / 3.0) * s2b.u;
  out.v = s.v / 3.0 + (2.0 / 3.0) * s2b.v;
  out.t = s.t + dt;
  if (!out.eta.allFinite() || out.eta.cwiseAbs().maxCoeff() > 1e3)
    throw NumericalError("step_tvdrk3: blow-up at t = " + std::to_string(out.t) + " s (max|eta| > 1e3)");
  return out;
}

FieldTrajectory simulate_from(const SweConfig& cfg, const SweState& init, int steps) {
  cfg.validate();
  if (init.ny() != cfg.ny || init.nx() != cfg.nx) throw DimensionError("simulate: initial state grid mismatch");
  if (((init.eta.array() + cfg.depth) <= 0).any()) throw ConfigError("simulate: total depth must be positive");
  FieldTrajectory tr;
  tr.cfg = cfg;
  tr.states.reserve(static_cast<std::size_t>(steps) + 1);
  tr.states.push_back(init);
  for (int k = 0; k < steps; ++k) tr.states.push_back(step_tvdrk3(tr.states.back(), cfg));
  return tr;
}

FieldTrajectory simulate(const SweConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return simulate_from(cfg, gaussian_init(cfg, seed), cfg.steps);
}

double swe_mass(const SweState& s, const SweConfig& cfg) { return s.eta.sum() * cfg.dx() * cfg.dy(); }

double swe_energy(const SweState& s, const SweConfig& cfg) {
  const double pot = cfg.gravity * s.eta.squaredNorm();
  const double kin = ((s.eta.array() + cfg.depth) * (s.u.array().square() + s.v.array().square())).sum();
  return 0.5 * (pot + kin) * cfg.dx() * cfg.dy();
}

namespace {
constexpr std::uint32_t kSnapshotVersion = 1;
}

void write_snapshot(io::Writer& w, const SweState& s) {
  w.magic("LTWF");
  w.u32(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(s.ny()));
  w.u32(static_cast<std::uint32_t>(s.nx()));
  w.f64(s.t);
  w.matrix(s.eta);
  w.matrix(s.u);
  w.matrix(s.v);
}

SweState read_snapshot(io::Reader& r) {
  r.expect_magic("LTWF");
  if (r.u32() != kSnapshotVersion) throw IoError("LTWF: unsupported version");
  const auto ny = r.u32();
  const auto nx = r.u32();
  if (ny == 0 || nx == 0 || ny > 100000 || nx > 100000) throw IoError("LTWF: implausible grid size");
  SweState s;
  s.t = r.f64();
  s.eta = r.matrix(ny, nx);
  s.u = r.matrix(ny, nx);
  s.v = r.matrix(ny, nx);
  return s;
}

void save_snapshot(const std::filesystem::path& path, const SweState& s) {
  io::Writer w(path);
  write_snapshot(w, s);
  w.close();
}

SweState load_snapshot(const std::filesystem::path& path) {
  io::Reader r(path);
  return read_snapshot(r);
}

void save_field_trajectory(const std::filesystem::path& path, const std::vector<SweState>& states) {
  io::Writer w(path);
  w.u64(states.size());
  for (const auto& s : states) write_snapshot(w, s);
  w.close();
}

std::vector<SweState> load_field_trajectory(const std::filesystem::path& path) {
  io::Reader r(path);
  const auto n = r.u64();
  std::vector<SweState> out;
  for (std::uint64_t k = 0; k < n; ++k) out.push_back(read_snapshot(r));
  if (!r.at_end()) throw IoError("field trajectory: trailing bytes in " + path.string());
  return out;
}

}  // namespace latwin
