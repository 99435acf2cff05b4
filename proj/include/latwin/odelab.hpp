#pragma once

// Benchmark ODE systems and an adaptive Dormand-Prince 5(4) integrator with
// continuous (dense) output.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "latwin/numkit.hpp"

namespace latwin {

enum class SystemId { harmonic, sir, lotka_volterra, lorenz63 };

struct OdeSystem {
  SystemId id = SystemId::harmonic;
  std::string name;
  std::map<std::string, double> params;
  int dim = 0;
  Vector x0;
  double t_start = 0.0;
  double t_end = 0.0;

  static OdeSystem make(SystemId id);
  /// Accepts "harmonic", "sir", "lotka-volterra" (or "lv"), "lorenz63" (or "lorenz").
  static OdeSystem by_name(std::string_view name);
  double param(const std::string& key) const { return params.at(key); }
};

/// Right-hand side G(x, t).
Vector rhs(const OdeSystem& sys, const Vector& x, double t);

using RhsFn = std::function<Vector(double t, const Vector& x)>;
/// Flow map evaluator (x1, t1, t2) -> x(t2).
using FlowFn = std::function<Vector(const Vector& x1, double t1, double t2)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;

  std::size_t size() const { return times.size(); }
  /// Strictly monotone times and finite states.
  void validate() const;
  /// CSV with header t,x1,...,xn.
  void write_csv(const std::filesystem::path& path) const;
};

struct IntegratorOptions {
  double atol = 1e-12;
  double rtol = 1e-10;
  double first_step = 0.0;  // 0 selects automatically
  std::size_t max_steps = 1'000'000;
};

/// Accepted steps of one integration plus the coefficients of the quartic
/// continuous extension on each step.
class OdeSolution {
 public:
  OdeSolution() = default;

  double t_begin() const { return t_begin_; }
  double t_end() const { return t_end_; }
  /// State at any t between t_begin and t_end.
  Vector operator()(double t) const;
  /// Accepted step points (including both endpoints).
  const Trajectory& steps() const { return steps_; }
  Vector final_state() const { return steps_.states.back(); }
  std::size_t rejected_steps() const { return rejected_; }

 private:
  friend OdeSolution integrate_dense(const RhsFn&, const Vector&, double, double,
                                     const IntegratorOptions&);
  struct Segment {
    double t0;
    double h;
    Vector r1, r2, r3, r4, r5;
  };
  double t_begin_ = 0.0;
  double t_end_ = 0.0;
  Trajectory steps_;
  std::vector<Segment> segments_;
  std::size_t rejected_ = 0;
};

/// Integrates x' = f(t, x) from t0 to t1 (either direction).
OdeSolution integrate_dense(const RhsFn& f, const Vector& x0, double t0, double t1,
                            const IntegratorOptions& opts = {});

/// Step-point trajectory of a benchmark system.
Trajectory integrate(const OdeSystem& sys, const Vector& x0, double t0, double t1,
                     const IntegratorOptions& opts = {});

OdeSolution solve(const OdeSystem& sys, const Vector& x0, double t0, double t1,
                  const IntegratorOptions& opts = {});

/// Exact-flow evaluator Phi(t2, t1, x1) for a benchmark system.
FlowFn make_flow(const OdeSystem& sys, const IntegratorOptions& opts = {});

/// Samples a solution on the given times.
Trajectory sample(const OdeSolution& sol, std::span<const double> times);

/// Uniform grid of n points on [a, b].
std::vector<double> linspace(double a, double b, std::size_t n);

/// Empirical Lipschitz rate L_G of the flow: the largest
/// log(|Phi(x+d) - Phi(x)| / |d|) / |t2 - t1| over sampled (x1, t1, t2) with a
/// small random perturbation d. Clamped at zero.
struct FlowSample {
  Vector x1;
  double t1;
  double t2;
};
double estimate_flow_lipschitz(const FlowFn& flow, std::span<const FlowSample> samples,
                               RngStream& rng, double rel_perturbation = 1e-6);

}  // namespace latwin
