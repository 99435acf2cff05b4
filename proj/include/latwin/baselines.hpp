#pragma once

// Comparison models: a many-to-one (10-to-1) LSTM for the ODE systems and a
// branch/trunk DeepONet for shallow-water trajectories.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latwin/autodiff.hpp"
#include "latwin/datasets.hpp"
#include "latwin/odelab.hpp"
#include "latwin/swe.hpp"

namespace latwin {

// ---------------------------------------------------------------- LSTM

/// Standard LSTM cell (gate order i, f, g, o) followed by a linear readout of
/// the last hidden state. Works on normalized states.
struct LstmModel {
  int n_x = 0;
  int hidden = 0;
  Matrix wx;    // 4h x n_x
  Matrix wh;    // 4h x h
  Vector b;     // 4h
  Matrix wout;  // n_x x h
  Vector bout;  // n_x
  NormStats norm;

  /// 4(h^2 + h n_x + h) + h n_x + n_x.
  static std::size_t formula_count(int n_x, int hidden);
  std::size_t parameter_count() const;
  ParamSpans parameters();
  void validate() const;
};

struct LstmGrad {
  Matrix wx, wh, wout;
  Vector b, bout;

  static LstmGrad zeros_like(const LstmModel& m);
  ConstParamSpans spans() const;
};

/// Uniform(-1/sqrt(h), 1/sqrt(h)) initialization.
LstmModel make_lstm(int n_x, int hidden, std::uint64_t seed);

/// Sliding windows of `window` consecutive states and the state that follows.
struct LstmWindows {
  int window = 10;
  std::vector<Matrix> inputs;  // window x n_x each
  Matrix targets;              // count x n_x
  std::size_t size() const { return inputs.size(); }
};
LstmWindows make_windows(const Trajectory& traj, int window = 10);

/// Prediction for each window (rows of the result); inputs must be normalized.
Matrix lstm_forward(const LstmModel& m, const std::vector<const Matrix*>& windows);

/// Mean squared error over the batch and its gradient (added into `grad`).
double lstm_loss_grad(const LstmModel& m, const std::vector<const Matrix*>& windows, const Matrix& targets,
                      LstmGrad* grad);

struct LstmTrainConfig {
  int hidden = 10;
  int window = 10;
  int epochs = 1000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
};

struct LstmTrainResult {
  LstmModel model;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

/// Normalizes the trajectory, builds windows and trains with Adam.
LstmTrainResult lstm_train(const Trajectory& traj, const LstmTrainConfig& cfg);

/// Continues `seed_states` (physical, at least `window` of them; the last
/// `window` are used) autoregressively for `steps` further states.
std::vector<Vector> lstm_rollout(const LstmModel& m, const std::vector<Vector>& seed_states, int window,
                                 std::size_t steps);

/// "LTLS" header followed by the gate and readout blocks.
void save_lstm(const std::filesystem::path& path, const LstmModel& m);
LstmModel load_lstm(const std::filesystem::path& path);

// ---------------------------------------------------------------- DeepONet

/// Branch network on the standardized initial field, trunk network on scaled
/// (chi1 / L, chi2 / L, 2 t / T - 1), three bias-free linear heads on the
/// elementwise product of their outputs.
struct DeepOnetModel {
  Mlp branch;
  Mlp trunk;
  Matrix heads;  // 3 x p
  NormStats norm;
  double half_width = 5e5;
  double t_max = 1.0;

  std::size_t parameter_count() const;
  void validate() const;
};

DeepOnetModel make_deeponet(Eigen::Index n_x, std::vector<int> branch_hidden, std::vector<int> trunk_hidden,
                            int latent, const NormStats& norm, double half_width, double t_max, std::uint64_t seed);

/// Standardized (eta, u, v) at each query row (chi1, chi2, t) for one
/// standardized initial state.
Matrix deeponet_evaluate(const DeepOnetModel& m, const Vector& x0_std, const Matrix& queries);

/// Physical state on the whole grid at time t from a physical initial state.
SweState deeponet_field(const DeepOnetModel& m, const SweState& x0, double t, const SweConfig& cfg);

/// Trajectory sample for training: every stored snapshot, physical units.
struct OperatorSample {
  SweState x0;
  std::vector<SweState> snapshots;
};

struct DeepOnetTrainConfig {
  std::vector<int> branch_hidden{512, 512, 256};
  std::vector<int> trunk_hidden{64, 128};
  int latent = 128;
  int epochs = 100;
  std::size_t batch_size = 16;
  std::size_t queries = 10000;
  double lr = 1e-3;
  double train_fraction = 0.95;
  std::uint64_t seed = 42;
};

struct DeepOnetTrainResult {
  DeepOnetModel model;
  std::vector<double> train_loss;
  std::vector<double> test_loss;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

/// Standardization uses `norm` when given (to share it with a twin), otherwise
/// statistics of the training trajectories.
DeepOnetTrainResult deeponet_train(const std::vector<OperatorSample>& data, const SweConfig& cfg,
                                   const DeepOnetTrainConfig& tc, std::optional<NormStats> norm = std::nullopt);

/// "LTDO" header, then branch and trunk LTNN sections and the heads.
void save_deeponet(const std::filesystem::path& path, const DeepOnetModel& m);
DeepOnetModel load_deeponet(const std::filesystem::path& path);

}  // namespace latwin
