#pragma once

// End-to-end experiment drivers shared by the command-line tool and the
// acceptance checks. Each driver is deterministic given its options.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latwin/assimilate.hpp"
#include "latwin/baselines.hpp"
#include "latwin/swe.hpp"
#include "latwin/twin.hpp"

namespace latwin::experiments {

// ---------------------------------------------------------------- ODE twins

struct OdeTwinOptions {
  std::size_t pairs = 32768;
  std::optional<double> gap_cap;
  int epochs = 1000;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  int restarts = 4;
  std::uint64_t seed = 42;
  /// Evaluation grid: grid + 1 uniform points on [t_start, t_end].
  std::size_t grid = 200;
};

struct OdeTwinReport {
  std::string system;
  std::size_t parameters = 0;
  double anchor_time = 0.0;
  /// Mean squared error (physical units) over the evaluation grid from one
  /// randomly drawn anchor (t1, x(t1)).
  double direct_mse = 0.0;
  double recursive_mse = 0.0;
  double seconds = 0.0;
  TrainResult train;
  PairDataset dataset;  // normalized
  std::vector<HorizonPoint> forward;   // anchor -> t_end
  std::vector<HorizonPoint> backward;  // anchor -> t_start
};

OdeTwinReport run_ode_twin(const OdeSystem& sys, const OdeTwinOptions& opt);

/// Error-budget diagnostic of a trained ODE twin with L_G estimated in the
/// twin's normalized coordinates.
ErrorBudget ode_error_budget(const OdeSystem& sys, const OdeTwinReport& report, std::uint64_t seed = 7);

// ---------------------------------------------------------------- structured

struct StructuredOptions {
  std::size_t pairs = 32768;
  int epochs = 60;
  double lr = 1e-2;
  int halving_period = 20;
  double curriculum_start_gap = 0.5;
  int curriculum_epochs = 30;
  std::uint64_t seed = 42;
  /// Perturbation-bound horizon.
  double horizon = 10.0;
};

struct StructuredReport {
  Matrix W;
  Matrix M;
  double generator_error = 0.0;  // |W - M|_F
  double max_trajectory_error = 0.0;  // exp(t W) x0 against the reference on [t_start, t_end]
  double max_map_error = 0.0;   // max |exp(hW) x1 - exp(hM) x1| over |h| <= horizon
  double perturbation_bound = 0.0;
  double seconds = 0.0;
  std::vector<double> loss_history;
};

/// Harmonic oscillator with an exact-rank exponential map.
StructuredReport run_structured_harmonic(const StructuredOptions& opt);

// ---------------------------------------------------------------- POD

struct PodReport {
  double max_difference = 0.0;
  double energy = 0.0;
  std::vector<double> steps;
};

/// Random stable n x n linear system; compares U exp(h U^T M U) U^T x with the
/// Galerkin ROM integrated numerically at `samples` random h.
PodReport run_pod_equivalence(int n = 10, int r = 4, int samples = 20, std::uint64_t seed = 42);

// ---------------------------------------------------------------- LSTM

struct HorizonComparison {
  double twin_slope = 0.0;
  double lstm_slope = 0.0;
  std::size_t parameters = 0;
  std::vector<HorizonPoint> twin;  // direct evaluation from the anchor
  std::vector<double> gaps;
  std::vector<double> lstm_error;
};

/// Trains an LSTM on a finely sampled trajectory of `sys` and compares the
/// growth of its rollout error with the direct-evaluation error of `twin`
/// from the same anchor (the last seed state).
HorizonComparison run_lstm_horizon(const OdeSystem& sys, const TwinModel& twin, const LstmTrainConfig& cfg,
                                   std::size_t samples = 1010);

// ---------------------------------------------------------------- SWE

struct SweOptions {
  int grid = 32;
  std::size_t trajectories = 8;
  std::size_t pairs = 4096;
  int epochs = 200;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  int halving_period = 50;
  std::vector<int> encoder_hidden{512, 256};
  int latent = 128;
  std::uint64_t seed = 42;
  /// First trajectory seed; trajectory k uses trajectory_seed + k.
  std::uint64_t trajectory_seed = 1000;
  int factor = 4;
  double noise_var = 0.01;
  int obs_step = 100;
  int forecast_step = 500;
  int infer_iters = 500;
  double infer_lr = 1e-2;
  int var_iters = 100;
};

SweConfig swe_config(const SweOptions& opt);

struct SweTwinReport {
  TrainResult train;
  PairDataset dataset;  // normalized
  double rel_reconstruction = 0.0;  // mean over test pairs, standardized coordinates
  double rel_prediction = 0.0;
  double seconds = 0.0;
};

SweTwinReport run_swe_twin(const SweOptions& opt);

/// Relative error |a - b| / |b| of two standardized fields.
double relative_field_error(const Vector& estimate, const Vector& truth);

struct InferenceReport {
  double twin_obs = 0.0;       // decoded inferred state at the observation time
  double bilinear_obs = 0.0;   // bilinear upsampling of the observation
  double twin_forecast = 0.0;  // twin forecast from the inferred latent to t2
  double twin_initial = 0.0;   // twin backcast from the inferred latent to t = 0
  double bilinear_forecast = 0.0;  // the upsampled observation held to t2
  LatentInferResult infer;
};

/// Observes trajectory `traj` at obs_step, infers the latent state and
/// forecasts to forecast_step. Errors are relative, in standardized units.
InferenceReport run_inference(const TwinModel& twin, const FieldTrajectory& traj, const SweOptions& opt);

struct VarReport {
  double background_obs = 0.0;
  double analysis_obs = 0.0;
  double analysis_forecast = 0.0;
  double twin_forecast = 0.0;
  /// Relative errors of both forecasts at obs_step, obs_step + 100, ..., forecast_step.
  std::vector<int> steps;
  std::vector<double> var_errors;
  std::vector<double> twin_errors;
  LbfgsResult opt;
};

/// Strong-constraint 4D-Var with one observation at the window start, the
/// twin's climatology as background, and a model forecast to t2.
VarReport run_fourdvar(const TwinModel& twin, const FieldTrajectory& traj, const SweOptions& opt);

struct OperatorComparison {
  std::vector<int> steps;
  std::vector<double> twin_error;      // mean relative error per evaluated step
  std::vector<double> deeponet_error;
  double deeponet_seconds = 0.0;
};

/// Trains a DeepONet on `train` (every `stride`-th snapshot, twin
/// normalization) and compares both models on `test` at each of `steps`,
/// starting from the initial state.
OperatorComparison run_operator_comparison(const TwinModel& twin, const std::vector<FieldTrajectory>& train,
                                           const std::vector<FieldTrajectory>& test, const std::vector<int>& steps,
                                           const DeepOnetTrainConfig& tc, int stride = 10);

}  // namespace latwin::experiments
