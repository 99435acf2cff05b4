#include <cmath>

#include "latwin/swe.hpp"
#include "swe_stencil.hpp"

namespace latwin {

SweState rhs_tl(const SweState& base, const SweState& dir, const SweConfig& cfg) {
  using namespace stencil;
  const int ny = base.ny(), nx = base.nx();
  const double H = cfg.depth, g = cfg.gravity;
  // d((eta + H) u) = deta u + (eta + H) du
  const Matrix dfx = dir.eta.cwiseProduct(base.u) + (base.eta.array() + H).matrix().cwiseProduct(dir.u);
  const Matrix dfy = dir.eta.cwiseProduct(base.v) + (base.eta.array() + H).matrix().cwiseProduct(dir.v);
  SweState d = SweState::zeros(cfg, base.t);
  const Grid grid{ny, nx, cfg.dx(), cfg.dy()};
  for (int j = 0; j < ny; ++j) {
    const double f = cfg.f0 + cfg.beta * cfg.y_center(j);
    for (int i = 0; i < nx; ++i) {
      d.eta(j, i) = -(ddx(dfx, grid, j, i, kOdd) + ddy(dfy, grid, j, i, kOdd));
      d.u(j, i) = f * dir.v(j, i) - g * ddx(dir.eta, grid, j, i, kEven);
      d.v(j, i) = -f * dir.u(j, i) - g * ddy(dir.eta, grid, j, i, kEven);
    }
  }
  return d;
}

SweState rhs_adj(const SweState& base, const SweState& w, const SweConfig& cfg) {
  using namespace stencil;
  const int ny = base.ny(), nx = base.nx();
  const double H = cfg.depth, g = cfg.gravity;
  const Grid grid{ny, nx, cfg.dx(), cfg.dy()};
  SweState a = SweState::zeros(cfg, base.t);
  Matrix afx = Matrix::Zero(ny, nx), afy = Matrix::Zero(ny, nx);
  for (int j = 0; j < ny; ++j) {
    const double f = cfg.f0 + cfg.beta * cfg.y_center(j);
    for (int i = 0; i < nx; ++i) {
      ddx_scatter(afx, grid, j, i, -w.eta(j, i), kOdd);
      ddy_scatter(afy, grid, j, i, -w.eta(j, i), kOdd);
      a.v(j, i) += f * w.u(j, i);
      ddx_scatter(a.eta, grid, j, i, -g * w.u(j, i), kEven);
      a.u(j, i) -= f * w.v(j, i);
      ddy_scatter(a.eta, grid, j, i, -g * w.v(j, i), kEven);
    }
  }
  const Matrix depth = (base.eta.array() + H).matrix();
  a.eta += afx.cwiseProduct(base.u) + afy.cwiseProduct(base.v);
  a.u += depth.cwiseProduct(afx);
  a.v += depth.cwiseProduct(afy);
  return a;
}

namespace {

struct Stages {
  SweState s0, s1, s2;
};

Stages stages(const SweState& s, const SweConfig& cfg) {
  Stages st;
  st.s0 = s;
  st.s1 = axpy(s, cfg.dt, rhs_swe(s, cfg));
  const SweState s1b = axpy(st.s1, cfg.dt, rhs_swe(st.s1, cfg));
  st.s2 = axpy(s, 0.0, s);
  st.s2.eta = 0.75 * s.eta + 0.25 * s1b.eta;
  st.s2.u = 0.75 * s.u + 0.25 * s1b.u;
  st.s2.v = 0.75 * s.v + 0.25 * s1b.v;
  return st;
}

SweState lincomb(double a, const SweState& x, double b, const SweState& y) {
  SweState r;
  r.eta = a * x.eta + b * y.eta;
  r.u = a * x.u + b * y.u;
  r.v = a * x.v + b * y.v;
  r.t = x.t;
  return r;
}

}  // namespace

SweState step_tl(const SweState& base, const SweState& dir, const SweConfig& cfg) {
  const Stages st = stages(base, cfg);
  const double dt = cfg.dt;
  const SweState d1 = axpy(dir, dt, rhs_tl(st.s0, dir, cfg));
  const SweState d2 = lincomb(0.75, dir, 0.25, axpy(d1, dt, rhs_tl(st.s1, d1, cfg)));
  SweState out = lincomb(1.0 / 3.0, dir, 2.0 / 3.0, axpy(d2, dt, rhs_tl(st.s2, d2, cfg)));
  out.t = base.t + dt;
  return out;
}

SweState step_adj(const SweState& base, const SweState& w, const SweConfig& cfg) {
  const Stages st = stages(base, cfg);
  const double dt = cfg.dt;
  // out = dir/3 + 2/3 (d2 + dt J2 d2)
  const SweState w2 = lincomb(2.0 / 3.0, w, 2.0 / 3.0 * dt, rhs_adj(st.s2, w, cfg));
  SweState a = lincomb(1.0 / 3.0, w, 0.0, w);
  // d2 = 3/4 dir + 1/4 (d1 + dt J1 d1)
  const SweState w1 = lincomb(0.25, w2, 0.25 * dt, rhs_adj(st.s1, w2, cfg));
  a = axpy(a, 0.75, w2);
  // d1 = dir + dt J0 dir
  a = axpy(a, 1.0, w1);
  a = axpy(a, dt, rhs_adj(st.s0, w1, cfg));
  a.t = base.t;
  return a;
}

}  // namespace latwin
