#pragma once

// Latent Twin surrogate: encoder e, latent map m(z, t1, t2) and decoder d,
// evaluated as d(m(e(x1), t1, t2)) in a single shot for any pair of times.
//
// Networks act on normalized states and times. Public evaluation functions
// take and return physical states; normalization is applied internally.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "latwin/autodiff.hpp"
#include "latwin/datasets.hpp"
#include "latwin/odelab.hpp"
#include "latwin/structured.hpp"

namespace latwin {

enum class TwinMode : std::uint32_t { mlp = 0, structured = 1, identity_ae = 2 };

std::string_view twin_mode_name(TwinMode mode);
TwinMode parse_twin_mode(std::string_view name);

struct TwinArchitecture {
  TwinMode mode = TwinMode::identity_ae;
  Eigen::Index latent_dim = 0;  // ignored in identity-AE mode (n_z = n_x)
  std::vector<int> encoder_hidden;
  Activation autoencoder_activation = Activation::relu;
  /// Hidden widths of the latent map; the map always ends in a linear layer
  /// onto the latent space.
  std::vector<int> map_hidden;
  Activation map_activation = Activation::softmax;
  /// m(z, t1, t2) = z + net(z, t1, t2), with the last layer zero-initialized.
  bool residual = false;
  /// Rank of the exponential map in structured mode.
  Eigen::Index structured_rank = 0;
  std::optional<HypernetArch> hypernet;

  /// Low-dimensional ODE twins: identity autoencoder, map
  /// (n_x+2) -> 16 -> 8 -> 4 with softmax, then linear 4 -> n_x.
  static TwinArchitecture ode_default(Eigen::Index n_x);
  /// Field twins: ReLU MLP autoencoder with the given hidden widths and a
  /// single affine latent map on (z, t1, t2).
  static TwinArchitecture field_default(std::vector<int> encoder_hidden, Eigen::Index latent_dim);
};

struct TwinModel {
  TwinMode mode = TwinMode::identity_ae;
  Eigen::Index n_x = 0;
  Eigen::Index n_z = 0;
  bool residual = false;
  Mlp encoder;
  Mlp latent;
  Mlp decoder;
  std::optional<StructuredMap> structured;
  NormStats norm;
  double t_min = 0.0;
  double t_max = 0.0;

  std::size_t parameter_count() const;
  void validate() const;
};

/// Builds an untrained model with seeded Xavier initialization.
TwinModel make_twin(const TwinArchitecture& arch, Eigen::Index n_x, const NormStats& norm,
                    std::uint64_t seed);

// Normalized-coordinate building blocks (rows are samples).
Matrix encode(const TwinModel& model, const Matrix& x_normalized);
Matrix decode(const TwinModel& model, const Matrix& z);
/// Latent evolution with normalized times.
Matrix latent_step(const TwinModel& model, const Matrix& z, const Vector& tau1, const Vector& tau2);

struct EvalDiagnostics {
  bool outside_trained_interval = false;
};

/// d(m(e(normalize(x1)), t1, t2)) in physical units.
Vector twin_evaluate(const TwinModel& model, const Vector& x1, double t1, double t2,
                     EvalDiagnostics* diag = nullptr);
/// Row-wise batch version.
Matrix twin_evaluate(const TwinModel& model, const Matrix& x1, const Vector& t1, const Vector& t2);

/// x_{k+1} = twin_evaluate(x_k, t_k, t_k + h); returns all iterates.
Trajectory twin_rollout(const TwinModel& model, const Vector& x0, double t0, double h, std::size_t steps);

/// Recursive counterpart of the batch twin_evaluate: each row is advanced from
/// t1 to t2 in ceil(|t2 - t1| / h) equal steps of size at most h.
Matrix twin_recursive(const TwinModel& model, const Matrix& x1, const Vector& t1, const Vector& t2, double h);

struct TrainConfig {
  int epochs = 1000;
  std::size_t batch_size = 256;
  LrSchedule schedule = LrSchedule::constant(1e-3);
  double w_rec = 1.0;
  double w_pred = 1.0;
  std::uint64_t seed = 42;
  bool deterministic = true;
  int eval_every = 1;
  /// Independent initializations; the one with the lowest final training loss
  /// is kept. Restart r > 0 uses a seed forked from `seed`.
  int restarts = 1;
  /// Gap curriculum, structured mode only (see StructuredTrainConfig).
  double curriculum_start_gap = 0.0;
  int curriculum_epochs = 0;
  /// Called after each evaluated epoch.
  std::function<void(int epoch, double train_loss, double test_pred)> on_epoch;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double test_rec_mse = 0.0;
  double test_pred_mse = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  TwinModel model;
  std::vector<EpochMetrics> history;
  std::size_t batches = 0;
};

/// Minimizes mean over samples of w_rec |d(e(x1)) - x1|^2 + w_pred |d(m(e(x1),t1,t2)) - x2|^2
/// (per-component means) on a normalized dataset. Structured mode fits the
/// exponential map on the denormalized samples instead.
TrainResult train_twin(const PairDataset& ds, const TwinArchitecture& arch, const TrainConfig& cfg);

/// Mean reconstruction and prediction MSE (normalized units) over `rows`.
std::pair<double, double> twin_mse(const TwinModel& model, const PairDataset& ds,
                                   std::span<const std::size_t> rows);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);

struct ErrorBudget {
  double eps_ae = 0.0;            // max |d(e(x)) - x|
  double eps_map = 0.0;           // max |m(e(x1), t1, t2) - e(x2)|
  double decoder_lipschitz = 0.0; // max |d(a) - d(b)| / |a - b| over sampled latent pairs
  double flow_lipschitz = 0.0;    // L_G supplied by the caller
  double horizon = 0.0;           // T
  double bound = 0.0;             // (1 + e^{L_G T}) eps_ae + L_d eps_map
  double max_end_to_end = 0.0;
  std::vector<double> end_to_end;  // per test sample
  bool holds() const { return max_end_to_end <= bound; }
};

/// Measures the two error terms of the uniform approximation bound on the test
/// split. Everything is in normalized coordinates, the space the networks act
/// in; `flow_lipschitz` must be estimated in the same coordinates.
ErrorBudget diagnose_error_budget(const TwinModel& model, const PairDataset& ds, double flow_lipschitz,
                                  double horizon, std::size_t extra_latent_pairs = 256,
                                  std::uint64_t seed = 7);

struct HorizonPoint {
  double t2 = 0.0;
  double gap = 0.0;
  double direct_error = 0.0;   // |LT(t2) - x(t2)|
  double rollout_error = 0.0;  // |x_k - x(t2)| for the recursive iterate
  double direct_sq = 0.0;      // mean squared component error
  double rollout_sq = 0.0;
  double autoencoder_error = 0.0;  // |d(e(x(t2))) - x(t2)|
};

/// Error curves from a fixed anchor (t1, x(t1)) over t2 = t1 + k h, k = 0..steps.
std::vector<HorizonPoint> horizon_error_profile(const TwinModel& model,
                                                const std::function<Vector(double)>& reference,
                                                double t1, double h, std::size_t steps);
void write_profile_csv(const std::filesystem::path& path, const std::vector<HorizonPoint>& profile);

/// Least-squares slope of log(error) against gap over points with positive gap.
double log_error_slope(const std::vector<HorizonPoint>& profile, bool rollout);

/// "LTTW" header + LTNN/LTSM sections.
void save_twin(const std::filesystem::path& path, const TwinModel& model);
TwinModel load_twin(const std::filesystem::path& path);

}  // namespace latwin
