#include "latwin/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace latwin {

namespace {

struct Point {
  double alpha;
  double f;
  double slope;  // directional derivative
};

// Minimizer of the cubic through two points with function values and slopes,
// falling back to bisection when it leaves the bracket.
double cubic_min(const Point& a, const Point& b) {
  const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.slope * b.slope;
  const double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  if (disc >= 0) {
    const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    const double t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    const double margin = 0.1 * (hi - lo);
    if (std::isfinite(t) && t > lo + margin && t < hi - margin) return t;
  }
  return 0.5 * (lo + hi);
}

class LineSearch {
 public:
  LineSearch(const Objective& fn, const Vector& x, const Vector& p, double f0, double slope0,
             const LbfgsOptions& opts, int& evals)
      : fn_(fn), x_(x), p_(p), f0_(f0), slope0_(slope0), opts_(opts), evals_(evals) {
    grad_.resize(x.size());
  }

  // Strong-Wolfe search (bracketing phase then zoom). Returns false on failure.
  bool run(double alpha1) {
    Point prev{0.0, f0_, slope0_};
    double alpha = alpha1;
    for (int it = 0; it < opts_.max_line_search; ++it) {
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f)) {
        alpha = 0.5 * (prev.alpha + alpha);
        continue;
      }
      if (cur.f > f0_ + opts_.c1 * alpha * slope0_ || (it > 0 && cur.f >= prev.f)) return zoom(prev, cur);
      if (std::abs(cur.slope) <= -opts_.c2 * slope0_) return accept(cur);
      if (cur.slope >= 0) return zoom(cur, prev);
      prev = cur;
      alpha *= 2.0;
    }
    return false;
  }

  double alpha() const { return best_alpha_; }
  double f() const { return best_f_; }
  const Vector& grad() const { return best_grad_; }

 private:
  Point eval(double alpha) {
    ++evals_;
    const double f = fn_(x_ + alpha * p_, grad_);
    const Point pt{alpha, f, grad_.dot(p_)};
    if (std::isfinite(f) && f < best_seen_) {
      best_seen_ = f;
      seen_alpha_ = alpha;
      seen_grad_ = grad_;
    }
    return pt;
  }

  bool accept(const Point& pt) {
    best_alpha_ = pt.alpha;
    best_f_ = pt.f;
    best_grad_ = grad_;
    return true;
  }

  bool zoom(Point lo, Point hi) {
    for (int it = 0; it < opts_.max_line_search; ++it) {
      const double alpha = cubic_min(lo, hi);
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + opts_.c1 * alpha * slope0_ || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -opts_.c2 * slope0_) return accept(cur);
        if (cur.slope * (hi.alpha - lo.alpha) >= 0) hi = lo;
        lo = cur;
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-14 * std::max(1.0, std::abs(lo.alpha))) break;
    }
    return false;
  }

 public:
  // Best decreasing point seen during a failed search.
  bool fallback() {
    if (!(best_seen_ < f0_)) return false;
    best_alpha_ = seen_alpha_;
    best_f_ = best_seen_;
    best_grad_ = seen_grad_;
    return true;
  }

 private:
  const Objective& fn_;
  const Vector& x_;
  const Vector& p_;
  double f0_, slope0_;
  const LbfgsOptions& opts_;
  int& evals_;
  Vector grad_;
  double best_alpha_ = 0.0, best_f_ = 0.0;
  Vector best_grad_;
  double best_seen_ = INFINITY, seen_alpha_ = 0.0;
  Vector seen_grad_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fn, Vector x0, const LbfgsOptions& opts) {
  if (opts.memory < 1 || opts.max_iters < 0 || !(opts.c1 > 0 && opts.c1 < opts.c2 && opts.c2 < 1))
    throw ConfigError("lbfgs: invalid options");
  LbfgsResult res;
  res.x = std::move(x0);
  Vector g(res.x.size());
  res.f = fn(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !g.allFinite()) throw NumericalError("lbfgs: non-finite objective at the start point");
  res.grad_norm0 = res.grad_norm = g.norm();
  res.history.push_back(res.f);
  if (res.grad_norm0 == 0.0) {
    res.converged = true;
    return res;
  }

  std::deque<Vector> S, Y;
  std::deque<double> rho;
  for (int k = 0; k < opts.max_iters; ++k) {
    // Two-loop recursion.
    Vector q = g;
    std::vector<double> a(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      a[i] = rho[i] * S[i].dot(q);
      q -= a[i] * Y[i];
    }
    double gamma = 1.0;
    if (!S.empty()) gamma = S.back().dot(Y.back()) / Y.back().squaredNorm();
    Vector p = gamma * q;
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double b = rho[i] * Y[i].dot(p);
      p += (a[i] - b) * S[i];
    }
    p = -p;
    double slope = g.dot(p);
    if (!(slope < 0)) {
      // Not a descent direction: restart from steepest descent.
      S.clear();
      Y.clear();
      rho.clear();
      p = -g;
      slope = -g.squaredNorm();
    }
    const double alpha1 = S.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    LineSearch ls(fn, res.x, p, res.f, slope, opts, res.evaluations);
    if (!ls.run(alpha1) && !ls.fallback()) {
      res.line_search_failed = true;
      break;
    }
    const Vector s = ls.alpha() * p;
    const Vector y = ls.grad() - g;
    res.x += s;
    res.f = ls.f();
    g = ls.grad();
    res.grad_norm = g.norm();
    res.history.push_back(res.f);
    ++res.iterations;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    if (res.grad_norm / res.grad_norm0 < opts.grad_rel_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace latwin
