#pragma once

// Small reverse-mode neural-network stack: dense layers with pointwise or
// softmax activations, batched forward passes that record a tape, exact
// reverse passes, Adam and learning-rate schedules.
//
// Batches are row-major matrices with one sample per row. Layer weights are
// stored (out x in), so a layer computes Y = X W^T + 1 b^T.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latwin/binary_io.hpp"
#include "latwin/numkit.hpp"

namespace latwin {

enum class Activation : std::uint32_t { identity = 0, relu = 1, tanh = 2, softmax = 3 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

using ParamSpans = std::vector<std::span<double>>;
using ConstParamSpans = std::vector<std::span<const double>>;

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// Xavier-uniform weights and zero biases. `widths` lists in, hidden..., out.
  static Mlp xavier(std::span<const int> widths, std::span<const Activation> activations,
                    RngStream& rng);

  bool empty() const { return layers_.empty(); }
  Eigen::Index in_dim() const;
  Eigen::Index out_dim() const;
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Mutable access invalidates every tape recorded against this network.
  std::vector<DenseLayer>& mutable_layers() {
    ++generation_;
    return layers_;
  }
  ParamSpans parameters();
  std::uint64_t generation() const { return generation_; }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = 0;
};

/// Everything the reverse pass needs: per-layer inputs and activated outputs.
struct Tape {
  const Mlp* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
};

struct MlpGrad {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static MlpGrad zeros_like(const Mlp& net);
  void set_zero();
  ConstParamSpans spans() const;
  ParamSpans mutable_spans();
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

/// Batched forward pass with tape. Throws NumericalError when an intermediate
/// goes non-finite.
ForwardResult forward(const Mlp& net, const Matrix& batch);

/// Forward pass for a single sample.
Vector forward(const Mlp& net, const Vector& x, Tape* tape);

/// Forward pass without recording.
Matrix infer(const Mlp& net, const Matrix& batch);
Vector infer(const Mlp& net, const Vector& x);

/// Reverse pass. Parameter gradients are *added* into `grad`; the gradient
/// with respect to the batch input is returned.
Matrix backward(const Tape& tape, const Matrix& d_output, MlpGrad& grad);

struct BackwardResult {
  MlpGrad grad;
  Matrix d_input;
};
BackwardResult backward(const Tape& tape, const Matrix& d_output);

/// Applies the activation to one row-major pre-activation block in place.
void apply_activation(Activation a, Matrix& values);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Vector> first;
  std::vector<Vector> second;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter block.
void adam_step(AdamState& state, const ParamSpans& params, const ConstParamSpans& grads);

struct LrSchedule {
  enum class Kind { constant, step_halving, plateau };

  Kind kind = Kind::constant;
  double lr0 = 1e-3;
  int period = 250;
  double factor = 0.7;
  int patience = 10;

  double lr = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  static LrSchedule constant(double lr0);
  static LrSchedule step_halving(double lr0, int period);
  static LrSchedule plateau(double lr0, double factor, int patience);
};

/// Learning rate to use after `epoch` given the latest validation loss.
double schedule_update(LrSchedule& s, int epoch, double validation_loss);

/// "LTNN" checkpoint section.
void write_mlp(io::Writer& w, const Mlp& net);
Mlp read_mlp(io::Reader& r);
void save_mlp(const std::filesystem::path& path, const Mlp& net);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace latwin
