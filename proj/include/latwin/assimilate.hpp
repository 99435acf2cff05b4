#pragma once

// Observation operator (strided decimation plus Gaussian noise), latent-space
// state inference through a trained decoder, and strong-constraint 4D-Var with
// the discrete tangent-linear/adjoint SWE model.
//
// Observations, latent inference and the 4D-Var control variable all live in
// standardized coordinates x~ = (x - mean) / std given by the twin's NormStats.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latwin/datasets.hpp"
#include "latwin/lbfgs.hpp"
#include "latwin/swe.hpp"
#include "latwin/twin.hpp"

namespace latwin {

struct ObsOperator {
  int factor = 8;
  double noise_var = 0.01;
  std::uint64_t seed = 0;
};

struct Observation {
  int factor = 1;
  double noise_var = 0.0;
  /// Coarse standardized fields; t is the observation time.
  SweState y;
};

/// Cell (j f, i f) of every channel. Throws ConfigError when f does not divide the grid.
SweState decimate(const SweState& fine, int factor);
/// Transpose of decimate: injection into a zero fine grid.
SweState decimate_adjoint(const SweState& coarse, int factor, int ny, int nx);

SweState standardize(const NormStats& norm, const SweState& s);
SweState destandardize(const NormStats& norm, const SweState& s);

/// P(state) + N(0, noise_var I) with `state` in standardized coordinates.
Observation observe(const ObsOperator& op, const SweState& standardized);

/// Bilinear interpolation of a decimated field back to the fine grid; coarse
/// sample k sits at fine index k * factor and values beyond the last sample
/// are held constant.
SweState bilinear_upsample(const SweState& coarse, int factor, int ny, int nx);

struct LatentInferResult {
  Vector z0;        // e(bilinear-upsampled observation)
  Vector z;         // final latent estimate
  double residual;  // mean squared misfit |P(d(z)) - y|^2 / count
  std::vector<double> history;
};

/// Minimizes |P(d(z)) - y|^2 with Adam from z0. The model must be a field twin
/// (mlp mode) on a grid compatible with the observation.
LatentInferResult latent_infer(const TwinModel& model, const Observation& obs, int ny, int nx, int iters,
                               double lr);

struct VarObservation {
  int step = 0;  // model steps after the window start
  SweState y;    // coarse standardized observation
};

struct VarProblem {
  SweConfig cfg;
  NormStats norm;
  Vector background;  // standardized
  double sigma_b = 0.1;
  double lambda = 4.0;
  int factor = 8;
  double noise_var = 0.01;
  double t0 = 0.0;
  std::vector<VarObservation> obs;

  void validate() const;
};

/// sigma_b^-2 (I + lambda L) v with L the 5-point Neumann graph Laplacian
/// (grid units), applied to each channel.
Vector apply_background_precision(const VarProblem& p, const Vector& v);

double fourdvar_cost(const VarProblem& p, const Vector& x0);
Vector fourdvar_gradient(const VarProblem& p, const Vector& x0);
double fourdvar_cost_grad(const VarProblem& p, const Vector& x0, Vector& grad);

struct VarResult {
  Vector analysis;  // standardized
  LbfgsResult opt;
};

VarResult fourdvar_solve(const VarProblem& p, int max_iters, LbfgsOptions opts = {});

/// Physical states obtained by propagating the standardized analysis with the
/// SWE model to each of `steps` (sorted, >= 0, relative to the window start).
std::vector<SweState> fourdvar_forecast(const VarProblem& p, const Vector& analysis, const std::vector<int>& steps);

/// "LTWO" file: version, factor, noise variance, t, coarse Ny, Nx, then eta, u, v.
void save_observation(const std::filesystem::path& path, const Observation& obs);
Observation load_observation(const std::filesystem::path& path);

}  // namespace latwin
