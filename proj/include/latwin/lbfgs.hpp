#pragma once

// Limited-memory BFGS with a strong-Wolfe line search.

#include <functional>
#include <vector>

#include "latwin/numkit.hpp"

namespace latwin {

/// Returns f(x) and writes the gradient into `grad` (already sized).
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int memory = 10;
  int max_iters = 200;
  /// Stop once |g| / |g0| falls below this.
  double grad_rel_tol = 1e-3;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 30;
};

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  double grad_norm = 0.0;
  double grad_norm0 = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  /// Set when the line search could not find a strong-Wolfe point; `x` is then
  /// the best iterate seen.
  bool line_search_failed = false;
  /// f at the start and after every accepted iterate.
  std::vector<double> history;
};

LbfgsResult lbfgs_minimize(const Objective& fn, Vector x0, const LbfgsOptions& opts = {});

}  // namespace latwin
