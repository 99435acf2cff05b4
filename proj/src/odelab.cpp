#include "latwin/odelab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace latwin {

OdeSystem OdeSystem::make(SystemId id) {
  OdeSystem s;
  s.id = id;
  switch (id) {
    case SystemId::harmonic:
      s.name = "harmonic";
      s.params = {{"omega0", 2.0}};
      s.dim = 2;
      s.x0 = Vector{{1.0, 0.0}};
      s.t_end = 10.0;
      break;
    case SystemId::sir:
      s.name = "sir";
      s.params = {{"beta", 0.3}, {"gamma", 0.1}};
      s.dim = 3;
      s.x0 = Vector{{0.99, 0.01, 0.0}};
      s.t_end = 60.0;
      break;
    case SystemId::lotka_volterra:
      s.name = "lotka-volterra";
      s.params = {{"alpha", 1.0}, {"beta", 0.1}, {"delta", 0.075}, {"gamma", 1.5}};
      s.dim = 2;
      s.x0 = Vector{{10.0, 5.0}};
      s.t_end = 30.0;
      break;
    case SystemId::lorenz63:
      s.name = "lorenz63";
      s.params = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}};
      s.dim = 3;
      s.x0 = Vector{{1.0, 1.0, 1.0}};
      s.t_end = 40.0;
      break;
  }
  return s;
}

OdeSystem OdeSystem::by_name(std::string_view name) {
  if (name == "harmonic") return make(SystemId::harmonic);
  if (name == "sir") return make(SystemId::sir);
  if (name == "lotka-volterra" || name == "lv") return make(SystemId::lotka_volterra);
  if (name == "lorenz63" || name == "lorenz") return make(SystemId::lorenz63);
  throw ConfigError("unknown ODE system: " + std::string(name));
}

Vector rhs(const OdeSystem& sys, const Vector& x, double /*t*/) {
  if (x.size() != sys.dim) throw DimensionError("rhs: state dimension mismatch for " + sys.name);
  Vector dx(sys.dim);
  switch (sys.id) {
    case SystemId::harmonic: {
      const double w = sys.param("omega0");
      dx << x(1), -w * w * x(0);
      break;
    }
    case SystemId::sir: {
      const double b = sys.param("beta"), g = sys.param("gamma");
      const double infection = b * x(0) * x(1);
      dx << -infection, infection - g * x(1), g * x(1);
      break;
    }
    case SystemId::lotka_volterra: {
      const double a = sys.param("alpha"), b = sys.param("beta");
      const double d = sys.param("delta"), g = sys.param("gamma");
      dx << a * x(0) - b * x(0) * x(1), d * x(0) * x(1) - g * x(1);
      break;
    }
    case SystemId::lorenz63: {
      const double s = sys.param("sigma"), r = sys.param("rho"), b = sys.param("beta");
      dx << s * (x(1) - x(0)), x(0) * (r - x(2)) - x(1), x(0) * x(1) - b * x(2);
      break;
    }
  }
  return dx;
}

void Trajectory::validate() const {
  if (times.size() != states.size()) throw DimensionError("Trajectory: times/states length mismatch");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ConfigError("Trajectory: times must be strictly increasing");
  for (const auto& s : states) require_finite(s, "Trajectory state");
}

void Trajectory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const Eigen::Index n = states.empty() ? 0 : states.front().size();
  out << "t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << (i + 1);
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < times.size(); ++k) {
    out << times[k];
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << states[k](i);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

// Dormand-Prince 5(4) tableau with the continuous extension of Hairer,
// Norsett & Wanner.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

double error_norm(const Vector& err, const Vector& y0, const Vector& y1, double atol, double rtol) {
  const Vector scale = (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
  return std::sqrt((err.array() / scale.array()).square().mean());
}

double initial_step(const RhsFn& f, double t0, const Vector& y0, const Vector& f0, double dir,
                    double hmax, double atol, double rtol) {
  const Vector sk = (atol + rtol * y0.cwiseAbs().array()).matrix();
  const double dnf = (f0.array() / sk.array()).square().mean();
  const double dny = (y0.array() / sk.array()).square().mean();
  double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
  h = std::min(h, hmax);
  const Vector y1 = y0 + dir * h * f0;
  const Vector f1 = f(t0 + dir * h, y1);
  const double der2 = std::sqrt(((f1 - f0).array() / sk.array()).square().mean()) / h;
  const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
  const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3)
                                   : std::pow(0.01 / der12, 1.0 / 5.0);
  return std::min({100 * std::abs(h), h1, hmax});
}

}  // namespace

OdeSolution integrate_dense(const RhsFn& f, const Vector& x0, double t0, double t1,
                            const IntegratorOptions& opts) {
  require_finite(x0, "integrate: initial state");
  if (!std::isfinite(t0) || !std::isfinite(t1)) throw ConfigError("integrate: non-finite time bounds");
  OdeSolution sol;
  sol.t_begin_ = t0;
  sol.t_end_ = t1;
  sol.steps_.times.push_back(t0);
  sol.steps_.states.push_back(x0);
  if (t1 == t0) return sol;

  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  constexpr double safe = 0.9, beta = 0.04, facc1 = 5.0, facc2 = 0.1;
  const double expo1 = 0.2 - beta * 0.75;
  double facold = 1e-4;

  double t = t0;
  Vector y = x0;
  Vector k1 = f(t, y);
  double h = opts.first_step > 0 ? opts.first_step
                                 : initial_step(f, t, y, k1, dir, span, opts.atol, opts.rtol);
  bool last_rejected = false;

  for (std::size_t n = 0; n < opts.max_steps; ++n) {
    const double remaining = std::abs(t1 - t);
    bool last = false;
    if (h >= remaining) {
      h = remaining;
      last = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(t)))
      throw NumericalError("integrate: step size underflow (stiff or singular problem)");
    const double hs = dir * h;

    const Vector k2 = f(t + c2 * hs, y + hs * a21 * k1);
    const Vector k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    const Vector k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vector y1 = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const Vector k7 = f(t + hs, y1);
    const Vector err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double enorm = error_norm(err, y, y1, opts.atol, opts.rtol);
    if (!std::isfinite(enorm) || !y1.allFinite())
      throw NumericalError("integrate: non-finite state");

    const double fac11 = std::pow(enorm, expo1);
    if (enorm <= 1.0) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(facc2, std::min(facc1, fac / safe));
      facold = std::max(enorm, 1e-4);

      OdeSolution::Segment seg;
      seg.t0 = t;
      seg.h = hs;
      const Vector ydiff = y1 - y;
      const Vector bspl = hs * k1 - ydiff;
      seg.r1 = y;
      seg.r2 = ydiff;
      seg.r3 = bspl;
      seg.r4 = ydiff - hs * k7 - bspl;
      seg.r5 = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      sol.segments_.push_back(std::move(seg));

      t = last ? t1 : t + hs;
      y = y1;
      k1 = k7;
      sol.steps_.times.push_back(t);
      sol.steps_.states.push_back(y);
      if (last) return sol;

      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      last_rejected = false;
      h = hnew;
    } else {
      h = h / std::min(facc1, fac11 / safe);
      last_rejected = true;
      ++sol.rejected_;
    }
  }
  throw NumericalError("integrate: maximum number of steps exceeded");
}

Vector OdeSolution::operator()(double t) const {
  const double lo = std::min(t_begin_, t_end_), hi = std::max(t_begin_, t_end_);
  const double slack = 1e-12 * std::max(1.0, std::abs(hi));
  if (t < lo - slack || t > hi + slack) throw ConfigError("OdeSolution: query time outside solved interval");
  if (segments_.empty()) return steps_.states.front();
  if (t == t_end_) return steps_.states.back();
  const bool forward = t_end_ > t_begin_;
  // Segment i covers [times[i], times[i+1]] in integration direction.
  const auto& ts = steps_.times;
  std::size_t idx;
  if (forward) {
    idx = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
  } else {
    idx = static_cast<std::size_t>(
        std::upper_bound(ts.begin(), ts.end(), t, [](double a, double b) { return a > b; }) - ts.begin());
  }
  idx = std::clamp<std::size_t>(idx, 1, segments_.size()) - 1;
  const Segment& s = segments_[idx];
  const double theta = (t - s.t0) / s.h;
  const double theta1 = 1.0 - theta;
  return s.r1 + theta * (s.r2 + theta1 * (s.r3 + theta * (s.r4 + theta1 * s.r5)));
}

OdeSolution solve(const OdeSystem& sys, const Vector& x0, double t0, double t1,
                  const IntegratorOptions& opts) {
  if (x0.size() != sys.dim) throw DimensionError("integrate: initial state dimension mismatch");
  return integrate_dense([&sys](double t, const Vector& x) { return rhs(sys, x, t); }, x0, t0, t1,
                         opts);
}

Trajectory integrate(const OdeSystem& sys, const Vector& x0, double t0, double t1,
                     const IntegratorOptions& opts) {
  auto sol = solve(sys, x0, t0, t1, opts);
  Trajectory traj = sol.steps();
  if (t1 < t0) {
    std::reverse(traj.times.begin(), traj.times.end());
    std::reverse(traj.states.begin(), traj.states.end());
  }
  return traj;
}

FlowFn make_flow(const OdeSystem& sys, const IntegratorOptions& opts) {
  return [sys, opts](const Vector& x1, double t1, double t2) {
    return solve(sys, x1, t1, t2, opts).final_state();
  };
}

Trajectory sample(const OdeSolution& sol, std::span<const double> times) {
  Trajectory out;
  for (double t : times) {
    out.times.push_back(t);
    out.states.push_back(sol(t));
  }
  return out;
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = a;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  out[n - 1] = b;
  return out;
}

double estimate_flow_lipschitz(const FlowFn& flow, std::span<const FlowSample> samples,
                               RngStream& rng, double rel_perturbation) {
  double rate = 0.0;
  for (const auto& s : samples) {
    const double gap = std::abs(s.t2 - s.t1);
    if (gap <= 0) continue;
    Vector dir(s.x1.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = rng.standard_normal();
    dir.normalize();
    const double eps = rel_perturbation * std::max(1.0, s.x1.norm());
    const Vector base = flow(s.x1, s.t1, s.t2);
    const Vector pert = flow(s.x1 + eps * dir, s.t1, s.t2);
    const double ratio = (pert - base).norm() / eps;
    if (ratio > 0) rate = std::max(rate, std::log(ratio) / gap);
  }
  return rate;
}

}  // namespace latwin
