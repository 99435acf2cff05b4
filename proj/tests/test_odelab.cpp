#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "latwin/errors.hpp"
#include "latwin/odelab.hpp"

using namespace latwin;

TEST_SUITE("odelab") {
  TEST_CASE("right-hand sides at known states") {
    const OdeSystem h = OdeSystem::by_name("harmonic");
    CHECK((rhs(h, Vector{{1.0, 0.0}}, 0.0) - Vector{{0.0, -4.0}}).norm() < 1e-15);
    const OdeSystem sir = OdeSystem::by_name("sir");
    // beta x S x I = 0.3 * 0.99 * 0.01, gamma I = 0.1 * 0.01
    const Vector d = rhs(sir, Vector{{0.99, 0.01, 0.0}}, 0.0);
    CHECK(d(0) == doctest::Approx(-0.00297).epsilon(1e-12));
    CHECK(d(1) == doctest::Approx(0.00197).epsilon(1e-12));
    CHECK(d(2) == doctest::Approx(0.001).epsilon(1e-12));
    const OdeSystem lz = OdeSystem::by_name("lorenz63");
    CHECK(rhs(lz, Vector::Zero(3), 0.0).norm() == 0.0);
    CHECK_THROWS_AS(rhs(lz, Vector::Zero(2), 0.0), DimensionError);
  }

  TEST_CASE("system lookup") {
    CHECK(OdeSystem::by_name("lv").id == SystemId::lotka_volterra);
    CHECK(OdeSystem::by_name("lorenz").id == SystemId::lorenz63);
    CHECK_THROWS_AS(OdeSystem::by_name("pendulum"), ConfigError);
  }

  TEST_CASE("harmonic solution against the closed form") {
    const OdeSystem h = OdeSystem::by_name("harmonic");
    const OdeSolution sol = solve(h, h.x0, 0.0, 10.0);
    const double q = std::numbers::pi / 2;
    CHECK((sol(q) - Vector{{-1.0, 0.0}}).norm() < 1e-8);
    for (double t : linspace(0.0, 10.0, 57))
      CHECK((sol(t) - Vector{{std::cos(2 * t), -2 * std::sin(2 * t)}}).norm() < 1e-8);
  }

  TEST_CASE("zero-length integration returns the initial state") {
    const OdeSystem s = OdeSystem::by_name("sir");
    const OdeSolution sol = solve(s, s.x0, 3.0, 3.0);
    CHECK(sol(3.0) == s.x0);
  }

  TEST_CASE("Lorenz forward then backward returns to the start") {
    const OdeSystem lz = OdeSystem::by_name("lorenz63");
    // Reverse time expands volumes, so integrate tightly.
    IntegratorOptions tight;
    tight.atol = 1e-14;
    tight.rtol = 1e-13;
    const FlowFn flow = make_flow(lz, tight);
    const Vector x1 = flow(lz.x0, 0.0, 1.0);
    CHECK((flow(x1, 1.0, 0.0) - lz.x0).norm() < 1e-6);
  }

  TEST_CASE("dense output agrees with a fresh integration at interior times") {
    const OdeSystem lv = OdeSystem::by_name("lv");
    const OdeSolution sol = solve(lv, lv.x0, lv.t_start, lv.t_end);
    const FlowFn flow = make_flow(lv);
    for (double t : {0.37, 2.5, 7.1}) CHECK((sol(t) - flow(lv.x0, lv.t_start, t)).norm() < 1e-7);
  }

  TEST_CASE("flow Lipschitz estimate of a scalar linear system") {
    const RhsFn f = [](double, const Vector& x) { return Vector(0.5 * x); };
    const FlowFn flow = [&](const Vector& x, double a, double b) { return integrate_dense(f, x, a, b).final_state(); };
    std::vector<FlowSample> samples{{Vector{{1.0}}, 0.0, 2.0}, {Vector{{-3.0}}, 1.0, 1.5}};
    RngStream rng(1);
    CHECK(estimate_flow_lipschitz(flow, samples, rng) == doctest::Approx(0.5).epsilon(1e-4));
  }

  TEST_CASE("trajectory csv and linspace") {
    const auto ts = linspace(0.0, 1.0, 5);
    CHECK(ts.size() == 5);
    CHECK(ts.back() == 1.0);
    const OdeSystem h = OdeSystem::by_name("harmonic");
    const Trajectory tr = sample(solve(h, h.x0, 0.0, 10.0), ts);
    tr.validate();
    const auto path = testing::scratch("traj.csv");
    tr.write_csv(path);
    CHECK(std::filesystem::file_size(path) > 0);
  }
}
