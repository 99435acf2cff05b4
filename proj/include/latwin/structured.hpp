#pragma once

// Latent maps with matrix-exponential structure:
//   x(t2) ~ U exp((t2 - t1) W) U^T x(t1)
// with W either a trained constant or the output of a hypernetwork evaluated
// at (x1, t1, t2). Also POD bases, Galerkin generators and the perturbation
// bound for the exponential flow.

#include <filesystem>
#include <optional>
#include <vector>

#include "latwin/autodiff.hpp"
#include "latwin/binary_io.hpp"
#include "latwin/datasets.hpp"

namespace latwin {

struct StructuredMap {
  Matrix basis;      // n x r, orthonormal columns
  Matrix generator;  // r x r, used when there is no hypernetwork
  std::optional<Mlp> hypernet;
  Vector input_mean;  // hypernet input scaling, size n + 2
  Vector input_std;

  static StructuredMap fixed(Matrix W, std::optional<Matrix> U = std::nullopt);

  Eigen::Index state_dim() const { return basis.rows(); }
  Eigen::Index latent_dim() const { return basis.cols(); }
  bool uses_hypernet() const { return hypernet.has_value(); }
  void validate() const;
};

/// W at (x1, t1, t2): the stored generator, or the reshaped hypernet output.
Matrix generator_at(const StructuredMap& map, const Vector& x1, double t1, double t2);

Vector structured_evaluate(const StructuredMap& map, const Vector& x1, double t1, double t2);

struct HypernetArch {
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::tanh;
};

struct StructuredTrainConfig {
  int epochs = 200;
  std::size_t batch_size = 256;
  LrSchedule schedule = LrSchedule::constant(1e-3);
  std::uint64_t seed = 42;
  /// Gap curriculum: when positive, epoch e only uses training pairs with
  /// |t2 - t1| <= g0 (gmax / g0)^(e / curriculum_epochs), after which all pairs
  /// are used. Long gaps wrap the phase of oscillatory flows many times, which
  /// leaves W = 0 in a poor basin without it.
  double curriculum_start_gap = 0.0;
  int curriculum_epochs = 0;
};

struct StructuredTrainResult {
  StructuredMap map;
  std::vector<double> loss_history;
};

/// Mean squared error of the structured prediction over `rows` of `ds`
/// (physical units), and optionally its gradient with respect to the fixed
/// generator.
double structured_loss(const StructuredMap& map, const PairDataset& ds,
                       std::span<const std::size_t> rows, Matrix* grad_generator = nullptr);

/// Fits W (or the hypernetwork producing W) to x2 ~ U exp((t2-t1)W) U^T x1.
/// `ds` must hold physical (denormalized) states.
StructuredTrainResult train_structured(const PairDataset& ds, Eigen::Index r,
                                       std::optional<HypernetArch> hypernet,
                                       const StructuredTrainConfig& cfg,
                                       std::optional<Matrix> basis = std::nullopt);

/// Leading r left singular vectors of a snapshot matrix whose columns are states.
Matrix pod_basis(const Matrix& snapshots, Eigen::Index r);

/// Fraction of snapshot energy sum_{i<=r} s_i^2 / sum s_i^2 captured by r modes.
double pod_energy(const Matrix& snapshots, Eigen::Index r);

/// U^T M U.
Matrix galerkin_generator(const Matrix& M, const Matrix& U);

/// H exp(H (|M| + |W - M|)) |W - M| sup|x1| with spectral norms.
double perturbation_bound(const Matrix& M, const Matrix& W, double H, double x_sup);

/// "LTSM" checkpoint section.
void write_structured(io::Writer& w, const StructuredMap& map);
StructuredMap read_structured(io::Reader& r);

}  // namespace latwin
