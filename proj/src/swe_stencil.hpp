#pragma once

// Centred differences with reflective ghost cells. A ghost value is the
// mirrored interior value times the field's parity across that wall: +1 for
// eta and tangential velocity, -1 for the normal velocity and its flux.
// The scatter versions are the exact transposes used by the adjoint model.

#include "latwin/numkit.hpp"

namespace latwin::stencil {

constexpr double kEven = 1.0;
constexpr double kOdd = -1.0;

struct Grid {
  int ny;
  int nx;
  double dx;
  double dy;
};

inline double ddx(const Matrix& f, const Grid& g, int j, int i, double parity) {
  const double right = i + 1 < g.nx ? f(j, i + 1) : parity * f(j, g.nx - 1);
  const double left = i > 0 ? f(j, i - 1) : parity * f(j, 0);
  return (right - left) / (2.0 * g.dx);
}

inline double ddy(const Matrix& f, const Grid& g, int j, int i, double parity) {
  const double up = j + 1 < g.ny ? f(j + 1, i) : parity * f(g.ny - 1, i);
  const double down = j > 0 ? f(j - 1, i) : parity * f(0, i);
  return (up - down) / (2.0 * g.dy);
}

/// out += ddx^T applied to a unit weight w at (j, i).
inline void ddx_scatter(Matrix& out, const Grid& g, int j, int i, double w, double parity) {
  const double c = w / (2.0 * g.dx);
  if (i + 1 < g.nx)
    out(j, i + 1) += c;
  else
    out(j, g.nx - 1) += parity * c;
  if (i > 0)
    out(j, i - 1) -= c;
  else
    out(j, 0) -= parity * c;
}

inline void ddy_scatter(Matrix& out, const Grid& g, int j, int i, double w, double parity) {
  const double c = w / (2.0 * g.dy);
  if (j + 1 < g.ny)
    out(j + 1, i) += c;
  else
    out(g.ny - 1, i) += parity * c;
  if (j > 0)
    out(j - 1, i) -= c;
  else
    out(0, i) -= parity * c;
}

}  // namespace latwin::stencil
