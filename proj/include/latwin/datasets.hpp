#pragma once

// Random time-pair datasets {(t1, x1), (t2, x2)} drawn from ODE or field
// trajectories, together with normalization statistics and a train/test split.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "latwin/odelab.hpp"

namespace latwin {

struct PairSample {
  double t1 = 0.0;
  Vector x1;
  double t2 = 0.0;
  Vector x2;
};

struct NormStats {
  Vector state_mean;
  Vector state_std;
  double time_mean = 0.0;
  double time_std = 1.0;

  /// mean 0, std 1 everywhere.
  static NormStats identity(Eigen::Index n);
  Eigen::Index dim() const { return state_mean.size(); }

  Vector normalize_state(const Vector& x) const;
  Vector denormalize_state(const Vector& z) const;
  Matrix normalize_states(const Matrix& rows) const;
  Matrix denormalize_states(const Matrix& rows) const;
  double normalize_time(double t) const { return (t - time_mean) / time_std; }
  double denormalize_time(double s) const { return s * time_std + time_mean; }
};

/// Samples stored column-wise: row j of x1/x2 is sample j.
struct PairDataset {
  Eigen::Index n_x = 0;
  Vector t1;
  Matrix x1;
  Vector t2;
  Matrix x2;
  NormStats norm;
  bool normalized = false;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(t1.size()); }
  PairSample sample(std::size_t j) const;
  /// Disjoint, exhaustive split into train/test, shuffled with the dataset seed.
  void make_split(double train_fraction = 0.8);
  void validate() const;
};

/// Where field states live: one trajectory of flattened states on a uniform
/// time grid.
struct FieldSeries {
  std::vector<double> times;
  std::vector<Vector> states;
};

/// J pairs with t1, t2 ~ U[t_start, t_end] read from one reference solution
/// started at the system's default initial state. When `gap_cap` is given,
/// pairs are resampled until |t2 - t1| <= gap_cap.
PairDataset sample_pairs_ode(const OdeSystem& sys, std::size_t J, std::optional<double> gap_cap,
                             std::uint64_t seed, const IntegratorOptions& opts = {});

/// Same as above, reading from an existing dense solution.
PairDataset sample_pairs_ode(const OdeSolution& reference, std::size_t J,
                             std::optional<double> gap_cap, std::uint64_t seed);

/// J pairs drawn uniformly over (trajectory, t1 index, t2 index).
PairDataset sample_pairs_field(const std::vector<FieldSeries>& trajectories, std::size_t J,
                               std::uint64_t seed);

/// Same sampling as sample_pairs_field, but trajectory k is produced on demand
/// by `make(k)` (called at most once per trajectory) so that only the sampled
/// states are kept in memory.
PairDataset sample_pairs_generated(std::size_t n_traj, std::size_t n_times, std::size_t J, std::uint64_t seed,
                                   const std::function<FieldSeries(std::size_t)>& make);

/// Per-dimension statistics on the training split. Zero-variance dimensions get
/// std 1. When `channels` > 1 the state is treated as `channels` equal blocks
/// and statistics are pooled per block.
NormStats compute_norm_stats(const PairDataset& ds, int channels = 1);

/// Normalizes states and times with training-split statistics (computed when
/// `stats` is absent).
PairDataset normalize(const PairDataset& ds, std::optional<NormStats> stats = std::nullopt,
                      int channels = 1);
PairDataset denormalize(const PairDataset& ds);
Vector denormalize(const NormStats& stats, const Vector& z);

/// Binary "LTW1" file plus a JSON sidecar (`path` + ".json") holding NormStats,
/// the split and the seed.
void save(const PairDataset& ds, const std::filesystem::path& path);
PairDataset load(const std::filesystem::path& path);

/// FNV-1a digest of the samples and split, used to confirm that models were
/// compared on identical data.
std::uint64_t dataset_hash(const PairDataset& ds);

}  // namespace latwin
