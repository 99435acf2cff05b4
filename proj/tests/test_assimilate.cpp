#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latwin/assimilate.hpp"
#include "latwin/errors.hpp"
#include "latwin/lbfgs.hpp"

using namespace latwin;

namespace {

SweConfig grid(int n) {
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

NormStats swe_norm(const SweConfig& c) {
  NormStats ns = NormStats::identity(c.state_size());
  const Eigen::Index n = c.state_size() / 3;
  ns.state_std.segment(0, n).setConstant(0.2);
  ns.state_std.segment(n, 2 * n).setConstant(0.05);
  return ns;
}

VarProblem problem(const SweConfig& c, int factor) {
  VarProblem p;
  p.cfg = c;
  p.norm = swe_norm(c);
  p.background = Vector::Zero(c.state_size());
  p.factor = factor;
  return p;
}

// Small field twin on a 16 x 16 grid, enough for structural checks.
const TwinModel& tiny_twin() {
  static const TwinModel model = [] {
    const SweConfig c = grid(16);
    const PairDataset raw = sample_pairs_generated(2, 601, 256, 3, [&](std::size_t k) { return simulate(c, 50 + k).series(); });
    const PairDataset ds = normalize(raw, std::nullopt, 3);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 32;
    tc.eval_every = 30;
    return train_twin(ds, TwinArchitecture::field_default({64}, 16), tc).model;
  }();
  return model;
}

}  // namespace

TEST_SUITE("assimilate") {
  TEST_CASE("decimation shapes, exact subsampling and its adjoint") {
    const SweConfig c = grid(64);
    RngStream rng(1);
    const SweState s = random_state(c, rng);
    const SweState d = decimate(s, 8);
    CHECK(d.ny() == 8);
    CHECK(d.nx() == 8);
    CHECK(d.eta(2, 3) == s.eta(16, 24));
    CHECK(d.v(7, 0) == s.v(56, 0));
    CHECK_THROWS_AS(decimate(s, 7), ConfigError);

    const SweState w = random_state(grid(8), rng);
    CHECK(std::abs(dot(decimate(s, 8), w) - dot(s, decimate_adjoint(w, 8, 64, 64))) < 1e-12);

    ObsOperator op;
    op.factor = 4;
    op.noise_var = 0.0;
    const Observation o = observe(op, s);
    CHECK(o.y.eta == decimate(s, 4).eta);
  }

  TEST_CASE("observation noise has the requested variance") {
    const SweConfig c = grid(64);
    ObsOperator op;
    op.factor = 1;
    op.noise_var = 0.01;
    op.seed = 9;
    const Observation o = observe(op, SweState::zeros(c));
    const Vector y = o.y.flatten();
    REQUIRE(y.size() >= 10000);
    const double var = y.squaredNorm() / static_cast<double>(y.size()) - std::pow(y.mean(), 2);
    CHECK(var == doctest::Approx(0.01).epsilon(0.05));
  }

  TEST_CASE("standardization round trip") {
    const SweConfig c = grid(8);
    RngStream rng(2);
    const SweState s = random_state(c, rng);
    const NormStats ns = swe_norm(c);
    CHECK((destandardize(ns, standardize(ns, s)).flatten() - s.flatten()).norm() < 1e-13);
  }

  TEST_CASE("bilinear upsampling reproduces linear fields") {
    const SweConfig c = grid(32);
    SweState s = SweState::zeros(c);
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) s.eta(j, i) = 0.5 * i - 0.25 * j + 1.0;
    const SweState up = bilinear_upsample(decimate(s, 4), 4, 32, 32);
    for (int j = 0; j <= 28; ++j)
      for (int i = 0; i <= 28; ++i) CHECK(up.eta(j, i) == doctest::Approx(s.eta(j, i)).epsilon(1e-12));
    CHECK(up.eta(31, 31) == doctest::Approx(s.eta(28, 28)));
  }

  TEST_CASE("observation file round trip") {
    RngStream rng(3);
    Observation o;
    o.factor = 8;
    o.noise_var = 0.01;
    o.y = random_state(grid(8), rng);
    o.y.t = 5100.0;
    const auto p = testing::scratch("obs.ltwo");
    save_observation(p, o);
    const Observation b = load_observation(p);
    CHECK(b.factor == 8);
    CHECK(b.y.u == o.y.u);
    CHECK(b.y.t == o.y.t);
  }

  TEST_CASE("latent inference: zero iterations and the noiseless lower bound") {
    const TwinModel& m = tiny_twin();
    const SweConfig c = grid(16);
    const SweState truth = standardize(m.norm, simulate(c, 50).states[200]);
    ObsOperator op;
    op.factor = 1;
    op.noise_var = 0.0;
    const Observation o = observe(op, truth);
    const auto r0 = latent_infer(m, o, 16, 16, 0, 1e-3);
    CHECK(r0.z == r0.z0);
    const Vector x = truth.flatten();
    const Vector rec = decode(m, encode(m, Matrix(x.transpose()))).row(0).transpose();
    const double ae = (rec - x).squaredNorm() / static_cast<double>(x.size());
    CHECK(r0.residual == doctest::Approx(ae).epsilon(1e-10));
    const auto r = latent_infer(m, o, 16, 16, 50, 1e-3);
    CHECK(r.residual <= ae);

    ObsOperator coarse;
    coarse.factor = 2;
    const auto rc = latent_infer(m, observe(coarse, truth), 16, 16, 20, 1e-2);
    CHECK(rc.history.size() == 21);
    CHECK(std::isfinite(rc.residual));
    CHECK_THROWS_AS(latent_infer(m, o, 8, 8, 1, 1e-3), DimensionError);
  }

  TEST_CASE("background precision is symmetric positive definite and fixes constants") {
    const SweConfig c = grid(8);
    const VarProblem p = problem(c, 2);
    RngStream rng(4);
    const Vector v = testing::random_vector(rng, c.state_size()), w = testing::random_vector(rng, c.state_size());
    const Vector Pv = apply_background_precision(p, v);
    CHECK(std::abs(Pv.dot(w) - v.dot(apply_background_precision(p, w))) < 1e-9 * Pv.norm() * w.norm());
    CHECK(Pv.dot(v) > 0.0);
    const Vector ones = Vector::Ones(c.state_size());
    CHECK((apply_background_precision(p, ones) - ones / (p.sigma_b * p.sigma_b)).norm() < 1e-9);
  }

  TEST_CASE("4D-Var cost identities") {
    const SweConfig c = grid(16);
    VarProblem p = problem(c, 2);
    CHECK(fourdvar_cost(p, p.background) == 0.0);
    RngStream rng(5);
    const Vector d = testing::random_vector(rng, c.state_size(), 0.1);
    for (double s : {0.5, 2.0, -3.0})
      CHECK(fourdvar_cost(p, Vector(p.background + s * d)) == doctest::Approx(s * s * fourdvar_cost(p, Vector(p.background + d))).epsilon(1e-12));

    // One noiseless observation of the background itself.
    p.obs.push_back({3, decimate(standardize(p.norm, simulate_from(c, destandardize(p.norm, SweState::unflatten(p.background, 16, 16)), 3).states.back()), 2)});
    CHECK(fourdvar_cost(p, p.background) < 1e-20);
    CHECK(fourdvar_gradient(p, p.background).norm() < 1e-8);
  }

  TEST_CASE("4D-Var gradient matches central differences") {
    const SweConfig c = grid(16);
    VarProblem p = problem(c, 2);
    RngStream rng(6);
    const SweState truth = gaussian_init(c, 11);
    const FieldTrajectory tr = simulate_from(c, truth, 12);
    for (int k : {0, 5, 12}) p.obs.push_back({k, decimate(standardize(p.norm, tr.states[static_cast<std::size_t>(k)]), 2)});
    const Vector x0 = testing::random_vector(rng, c.state_size(), 0.3);
    Vector g;
    fourdvar_cost_grad(p, x0, g);
    for (int trial = 0; trial < 10; ++trial) {
      const Vector dir = testing::random_vector(rng, c.state_size()).normalized();
      const double h = 1e-4;
      const double fd = (fourdvar_cost(p, Vector(x0 + h * dir)) - fourdvar_cost(p, Vector(x0 - h * dir))) / (2 * h);
      const double an = g.dot(dir);
      CHECK(std::abs(fd - an) / std::max(std::abs(an), 1e-8) < 1e-5);
    }
  }

  TEST_CASE("4D-Var without observations keeps the background") {
    const SweConfig c = grid(8);
    const VarProblem p = problem(c, 2);
    const VarResult r = fourdvar_solve(p, 20);
    CHECK(r.analysis == p.background);
    CHECK(r.opt.iterations == 0);
  }

  TEST_CASE("identical-twin 4D-Var recovers the truth") {
    const SweConfig c = grid(16);
    VarProblem p = problem(c, 1);
    p.noise_var = 1e-4;
    const SweState truth = gaussian_init(c, 13);
    const FieldTrajectory tr = simulate_from(c, truth, 20);
    for (int k : {0, 10, 20}) p.obs.push_back({k, standardize(p.norm, tr.states[static_cast<std::size_t>(k)])});
    const Vector x_true = standardize(p.norm, truth).flatten();
    const VarResult r = fourdvar_solve(p, 200);
    const double bg = (p.background - x_true).norm(), an = (r.analysis - x_true).norm();
    CHECK(an < 0.2 * bg);
    const auto fc = fourdvar_forecast(p, r.analysis, {0, 20});
    CHECK(fc.size() == 2);
  }

  TEST_CASE("L-BFGS on Rosenbrock and a quadratic") {
    const Objective rosen = [](const Vector& x, Vector& g) {
      const double a = 1 - x(0), b = x(1) - x(0) * x(0);
      g(0) = -2 * a - 400 * x(0) * b;
      g(1) = 200 * b;
      return a * a + 100 * b * b;
    };
    LbfgsOptions o;
    o.grad_rel_tol = 1e-10;
    const auto r = lbfgs_minimize(rosen, Vector{{-1.2, 1.0}}, o);
    CHECK(r.converged);
    CHECK((r.x - Vector{{1.0, 1.0}}).norm() < 1e-6);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);

    const Vector d{{1.0, 10.0, 100.0}};
    const Objective quad = [&](const Vector& x, Vector& g) {
      g = d.cwiseProduct(x);
      return 0.5 * x.dot(g);
    };
    const auto q = lbfgs_minimize(quad, Vector::Ones(3), o);
    CHECK(q.x.norm() < 1e-7);

    const auto z = lbfgs_minimize(quad, Vector::Zero(3), o);
    CHECK(z.iterations == 0);
    CHECK(z.converged);
  }
}
