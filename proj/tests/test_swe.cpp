#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latwin/errors.hpp"
#include "latwin/swe.hpp"

using namespace latwin;

namespace {

SweConfig small(int n = 16) {
  SweConfig c;
  c.nx = c.ny = n;
  return c;
}

SweState random_state(const SweConfig& c, RngStream& rng, double scale = 1.0) {
  SweState s = SweState::zeros(c);
  for (Matrix* m : {&s.eta, &s.u, &s.v})
    for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = scale * rng.standard_normal();
  return s;
}

double norm(const SweState& s) { return std::sqrt(dot(s, s)); }

// Crest position along the centre row east of the bump, refined by a parabola.
double crest_radius(const SweState& s, const SweConfig& c) {
  const int j = c.ny / 2;
  int best = c.nx / 2 + 1;
  for (int i = c.nx / 2 + 1; i < c.nx - 1; ++i)
    if (s.eta(j, i) > s.eta(j, best)) best = i;
  const double a = s.eta(j, best - 1), b = s.eta(j, best), d = s.eta(j, best + 1);
  const double shift = 0.5 * (a - d) / (a - 2 * b + d);
  return c.x_center(best) + shift * c.dx();
}

}  // namespace

TEST_SUITE("swe") {
  TEST_CASE("configuration checks") {
    SweConfig c;
    c.validate();
    CHECK(c.wave_speed() == doctest::Approx(std::sqrt(9.81 * 100.0)));
    CHECK(c.dt <= c.cfl_limit());
    SweConfig bad = c;
    bad.dt = 1000.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.nx = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("Gaussian initial surface") {
    SweConfig c;
    c.nx = c.ny = 100;  // dx = 1e4, so 15 cells = 3 sigma
    const SweState s = gaussian_bump(c, c.x_center(50), c.y_center(40));
    CHECK(s.eta(40, 50) == 1.0);
    CHECK(s.eta(40, 65) == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
    CHECK(std::exp(-4.5) == doctest::Approx(0.0111).epsilon(1e-2));
    CHECK(s.u.norm() == 0.0);
    CHECK(s.v.norm() == 0.0);

    const SweState r = gaussian_init(c, 17);
    Eigen::Index jr, ir;
    const double peak = r.eta.maxCoeff(&jr, &ir);
    CHECK(peak <= 1.0);
    CHECK(peak > std::exp(-0.25 * (c.dx() * c.dx() + c.dy() * c.dy()) / (2 * c.sigma_init * c.sigma_init)));
    CHECK(r.u.norm() == 0.0);
    CHECK(gaussian_init(c, 17).eta == r.eta);
  }

  TEST_CASE("rest and constant states have zero tendency") {
    const SweConfig c = small();
    SweState s = SweState::zeros(c);
    CHECK(norm(rhs_swe(s, c)) == 0.0);
    s.eta.setConstant(0.7);
    CHECK(norm(rhs_swe(s, c)) < 1e-15);
    SweState rest = SweState::zeros(c);
    const SweState next = step_tvdrk3(rest, c);
    CHECK(next.eta == rest.eta);
    CHECK(next.u == rest.u);
    CHECK(next.v == rest.v);
    CHECK(next.t == c.dt);
  }

  TEST_CASE("geostrophic balance with constant Coriolis") {
    SweConfig c;
    c.beta = 0.0;
    c.nx = c.ny = 64;
    const double s2 = 2 * std::pow(1.5e5, 2);
    SweState s = SweState::zeros(c);
    double gmax = 0.0;
    for (int j = 0; j < c.ny; ++j)
      for (int i = 0; i < c.nx; ++i) {
        const double x = c.x_center(i), y = c.y_center(j);
        const double e = 0.1 * std::exp(-(x * x + y * y) / s2);
        s.eta(j, i) = e;
        const double ex = -2 * x / s2 * e, ey = -2 * y / s2 * e;
        s.u(j, i) = -(c.gravity / c.f0) * ey;
        s.v(j, i) = (c.gravity / c.f0) * ex;
        gmax = std::max(gmax, c.gravity * std::hypot(ex, ey));
      }
    const SweState d = rhs_swe(s, c);
    double worst = 0.0;
    for (int j = 3; j < c.ny - 3; ++j)
      for (int i = 3; i < c.nx - 3; ++i) worst = std::max({worst, std::abs(d.u(j, i)), std::abs(d.v(j, i))});
    // Centred differences on a bump 10 cells wide: truncation error of a few percent.
    CHECK(worst < 0.05 * gmax);
  }

  TEST_CASE("mass is conserved step by step") {
    const SweConfig c = small(32);
    SweState s = gaussian_init(c, 3);
    const double m0 = swe_mass(s, c);
    for (int k = 0; k < 20; ++k) {
      const double before = swe_mass(s, c);
      s = step_tvdrk3(s, c);
      CHECK(std::abs(swe_mass(s, c) - before) <= 1e-12 * std::abs(m0));
    }
  }

  TEST_CASE("full-resolution run: duration, mass, energy, determinism") {
    const SweConfig c;
    const FieldTrajectory tr = simulate(c, 5);
    CHECK(tr.size() == 601);
    CHECK(tr.states.back().t >= 3.0e4);
    CHECK(tr.states.back().t <= 3.1e4);
    const double m0 = swe_mass(tr.states.front(), c);
    CHECK(std::abs(swe_mass(tr.states.back(), c) - m0) / std::abs(m0) < 1e-6);
    const double e0 = swe_energy(tr.states.front(), c);
    for (const auto& s : tr.states) CHECK(swe_energy(s, c) <= 1.05 * e0);
    const FieldTrajectory again = simulate(c, 5);
    CHECK(again.states.back().eta == tr.states.back().eta);
    CHECK(again.states.back().v == tr.states.back().v);
  }

  TEST_CASE("a centred bump keeps its four-fold mirror symmetry without rotation") {
    SweConfig c = small(32);
    c.f0 = 0.0;
    c.beta = 0.0;
    const FieldTrajectory tr = simulate_from(c, gaussian_bump(c, 0.0, 0.0), 100);
    const SweState& s = tr.states.back();
    const Matrix& e = s.eta;
    CHECK((e - e.colwise().reverse()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((e - e.rowwise().reverse()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((e - e.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((s.u + s.u.rowwise().reverse()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((s.v + s.v.colwise().reverse()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((s.u - s.v.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("small-amplitude crest travels at the gravity-wave speed") {
    SweConfig c;
    c.nx = c.ny = 128;
    c.f0 = 0.0;
    c.beta = 0.0;
    c.dt = 25.0;
    c.sigma_init = 3e4;
    SweState s = gaussian_bump(c, 0.0, 0.0);
    s.eta *= 0.01;
    const FieldTrajectory tr = simulate_from(c, s, 400);
    const double r1 = crest_radius(tr.states[120], c), r2 = crest_radius(tr.states[360], c);
    const double speed = (r2 - r1) / (tr.states[360].t - tr.states[120].t);
    CHECK(speed == doctest::Approx(c.wave_speed()).epsilon(0.05));
  }

  TEST_CASE("refinement converges towards a fine reference") {
    auto run = [](int n, double dt, double t_end) {
      SweConfig c;
      c.nx = c.ny = n;
      c.dt = dt;
      return simulate_from(c, gaussian_bump(c, 1e5, -5e4), static_cast<int>(std::lround(t_end / dt))).states.back();
    };
    const double T = 5100.0;
    const SweState ref = run(128, 12.75, T);
    auto coarse_error = [&](const SweState& s) {
      const int f = 128 / s.nx();
      double e = 0.0;
      for (int j = 0; j < s.ny(); ++j)
        for (int i = 0; i < s.nx(); ++i) {
          const double avg = ref.eta.block(j * f, i * f, f, f).mean();
          e += std::pow(s.eta(j, i) - avg, 2);
        }
      return std::sqrt(e / s.eta.size());
    };
    const double e32 = coarse_error(run(32, 51.0, T));
    const double e64 = coarse_error(run(64, 25.5, T));
    CHECK(e64 < e32);
  }

  TEST_CASE("blow-up and non-finite states are reported") {
    const SweConfig c = small();
    SweState s = SweState::zeros(c);
    s.eta(3, 3) = 2e3;
    CHECK_THROWS_AS(step_tvdrk3(s, c), NumericalError);
    SweState n = SweState::zeros(c);
    n.u(1, 1) = std::nan("");
    CHECK_THROWS_AS(rhs_swe(n, c), NumericalError);
  }

  TEST_CASE("tangent-linear step matches finite differences") {
    const SweConfig c = small();
    RngStream rng(1);
    const SweState base = simulate(c, 5).states[50];
    const SweState dir = random_state(c, rng, 1e-2);
    const double h = 1e-6;
    const SweState fd = axpy(step_tvdrk3(axpy(base, h, dir), c), -1.0, step_tvdrk3(axpy(base, -h, dir), c));
    const SweState tl = step_tl(base, dir, c);
    CHECK(norm(axpy(fd, -2 * h, tl)) / norm(fd) < 1e-7);
  }

  TEST_CASE("adjoint dot-product identity for 1, 10 and 100 composed steps") {
    const SweConfig c = small();
    RngStream rng(2);
    const FieldTrajectory tr = simulate(c, 7);
    const SweState v = random_state(c, rng), w = random_state(c, rng);
    CHECK(std::abs(dot(rhs_tl(tr.states[10], v, c), w) - dot(v, rhs_adj(tr.states[10], w, c))) <=
          1e-12 * std::abs(dot(rhs_tl(tr.states[10], v, c), w)));
    for (int steps : {1, 10, 100}) {
      SweState a = v;
      for (int k = 0; k < steps; ++k) a = step_tl(tr.states[static_cast<std::size_t>(k)], a, c);
      SweState b = w;
      for (int k = steps - 1; k >= 0; --k) b = step_adj(tr.states[static_cast<std::size_t>(k)], b, c);
      const double lhs = dot(a, w), rhs = dot(v, b);
      CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-10);
    }
  }

  TEST_CASE("snapshot and trajectory files") {
    const SweConfig c = small(8);
    const FieldTrajectory tr = simulate_from(c, gaussian_bump(c, 0.0, 1e5), 5);
    const auto p = testing::scratch("snap.ltwf");
    save_snapshot(p, tr.states[3]);
    const SweState s = load_snapshot(p);
    CHECK(s.eta == tr.states[3].eta);
    CHECK(s.t == tr.states[3].t);
    const auto q = testing::scratch("traj.ltwf");
    save_field_trajectory(q, tr.states);
    const auto back = load_field_trajectory(q);
    REQUIRE(back.size() == tr.states.size());
    CHECK(back.back().v == tr.states.back().v);
    std::filesystem::resize_file(q, std::filesystem::file_size(q) - 3);
    CHECK_THROWS_AS(load_field_trajectory(q), IoError);
    CHECK(SweState::unflatten(s.flatten(), 8, 8, s.t).u == s.u);
  }
}
