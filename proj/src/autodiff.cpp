#include "latwin/autodiff.hpp"

#include <cmath>

namespace latwin {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation: " + std::string(name));
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.bias.size() != l.weight.rows())
      throw DimensionError("Mlp: bias length does not match layer output");
    if (k > 0 && layers_[k - 1].out_dim() != l.in_dim())
      throw DimensionError("Mlp: consecutive layer dimensions do not chain");
    if (static_cast<std::uint32_t>(l.activation) > 3) throw ConfigError("Mlp: invalid activation");
    require_finite(l.weight, "Mlp weight");
    require_finite(l.bias, "Mlp bias");
  }
}

Mlp Mlp::xavier(std::span<const int> widths, std::span<const Activation> activations,
                RngStream& rng) {
  if (widths.size() < 2 || activations.size() != widths.size() - 1)
    throw ConfigError("Mlp::xavier: need n+1 widths for n activations");
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int in = widths[k], out = widths[k + 1];
    if (in <= 0 || out <= 0) throw ConfigError("Mlp::xavier: widths must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    DenseLayer l;
    l.weight.resize(out, in);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = rng.uniform(-limit, limit);
    l.bias = Vector::Zero(out);
    l.activation = activations[k];
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

Eigen::Index Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
Eigen::Index Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ParamSpans Mlp::parameters() {
  ++generation_;
  ParamSpans out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

MlpGrad MlpGrad::zeros_like(const Mlp& net) {
  MlpGrad g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

void MlpGrad::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

ConstParamSpans MlpGrad::spans() const {
  ConstParamSpans out;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    out.emplace_back(weight[k].data(), static_cast<std::size_t>(weight[k].size()));
    out.emplace_back(bias[k].data(), static_cast<std::size_t>(bias[k].size()));
  }
  return out;
}

ParamSpans MlpGrad::mutable_spans() {
  ParamSpans out;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    out.emplace_back(weight[k].data(), static_cast<std::size_t>(weight[k].size()));
    out.emplace_back(bias[k].data(), static_cast<std::size_t>(bias[k].size()));
  }
  return out;
}

void apply_activation(Activation a, Matrix& values) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: values = values.cwiseMax(0.0); break;
    case Activation::tanh: values = values.array().tanh().matrix(); break;
    case Activation::softmax:
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        auto row = values.row(i);
        const double shift = row.maxCoeff();
        row = (row.array() - shift).exp().matrix();
        row /= row.sum();
      }
      break;
  }
}

namespace {

void affine(const DenseLayer& l, const Matrix& x, Matrix& y) {
  if (x.cols() != l.in_dim()) throw DimensionError("forward: input width does not match layer");
  y.noalias() = x * l.weight.transpose();
  y.rowwise() += l.bias.transpose();
}

}  // namespace

ForwardResult forward(const Mlp& net, const Matrix& batch) {
  ForwardResult res;
  res.tape.net = &net;
  res.tape.generation = net.generation();
  res.tape.inputs.reserve(net.layers().size());
  res.tape.outputs.reserve(net.layers().size());
  Matrix current = batch;
  for (const auto& l : net.layers()) {
    Matrix y;
    affine(l, current, y);
    apply_activation(l.activation, y);
    if (!y.allFinite()) throw NumericalError("forward: non-finite activation (divergence)");
    res.tape.inputs.push_back(std::move(current));
    res.tape.outputs.push_back(y);
    current = std::move(y);
  }
  res.output = std::move(current);
  return res;
}

Vector forward(const Mlp& net, const Vector& x, Tape* tape) {
  Matrix batch = x.transpose();
  auto res = forward(net, batch);
  if (tape) *tape = std::move(res.tape);
  return res.output.row(0).transpose();
}

Matrix infer(const Mlp& net, const Matrix& batch) {
  Matrix current = batch;
  Matrix y;
  for (const auto& l : net.layers()) {
    affine(l, current, y);
    apply_activation(l.activation, y);
    current.swap(y);
  }
  if (!current.allFinite()) throw NumericalError("infer: non-finite output (divergence)");
  return current;
}

Vector infer(const Mlp& net, const Vector& x) {
  Matrix batch = x.transpose();
  return infer(net, batch).row(0).transpose();
}

Matrix backward(const Tape& tape, const Matrix& d_output, MlpGrad& grad) {
  if (tape.net == nullptr) throw ConfigError("backward: empty tape");
  const Mlp& net = *tape.net;
  if (tape.generation != net.generation() || tape.inputs.size() != net.layers().size())
    throw ConfigError("backward: stale tape (network changed since forward)");
  if (grad.weight.size() != net.layers().size())
    throw DimensionError("backward: gradient buffer does not match network");

  Matrix delta = d_output;
  for (std::size_t kk = net.layers().size(); kk-- > 0;) {
    const DenseLayer& l = net.layers()[kk];
    const Matrix& y = tape.outputs[kk];
    if (delta.rows() != y.rows() || delta.cols() != y.cols())
      throw DimensionError("backward: output gradient shape mismatch");
    switch (l.activation) {
      case Activation::identity: break;
      case Activation::relu: delta = (y.array() > 0.0).select(delta, 0.0); break;
      case Activation::tanh: delta = (delta.array() * (1.0 - y.array().square())).matrix(); break;
      case Activation::softmax: {
        const Vector dots = (delta.array() * y.array()).rowwise().sum();
        delta = (y.array() * (delta.colwise() - dots).array()).matrix();
        break;
      }
    }
    grad.weight[kk].noalias() += delta.transpose() * tape.inputs[kk];
    grad.bias[kk] += delta.colwise().sum().transpose();
    Matrix next;
    next.noalias() = delta * l.weight;
    delta.swap(next);
  }
  return delta;
}

BackwardResult backward(const Tape& tape, const Matrix& d_output) {
  if (tape.net == nullptr) throw ConfigError("backward: empty tape");
  BackwardResult res{MlpGrad::zeros_like(*tape.net), Matrix()};
  res.d_input = backward(tape, d_output, res.grad);
  return res;
}

void adam_step(AdamState& state, const ParamSpans& params, const ConstParamSpans& grads) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (!(state.lr > 0)) throw ConfigError("adam_step: learning rate must be positive");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
      state.second.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
    }
  }
  if (state.first.size() != params.size()) throw DimensionError("adam_step: moment buffers do not match");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    const auto& g = grads[k];
    if (p.size() != g.size() || static_cast<Eigen::Index>(p.size()) != state.first[k].size())
      throw DimensionError("adam_step: shape mismatch");
    double* m = state.first[k].data();
    double* v = state.second[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

LrSchedule LrSchedule::constant(double lr0) {
  LrSchedule s;
  s.kind = Kind::constant;
  s.lr0 = s.lr = lr0;
  return s;
}

LrSchedule LrSchedule::step_halving(double lr0, int period) {
  if (period < 1) throw ConfigError("LrSchedule: period must be >= 1");
  LrSchedule s;
  s.kind = Kind::step_halving;
  s.lr0 = s.lr = lr0;
  s.period = period;
  return s;
}

LrSchedule LrSchedule::plateau(double lr0, double factor, int patience) {
  if (!(factor > 0 && factor < 1)) throw ConfigError("LrSchedule: factor must lie in (0,1)");
  if (patience < 1) throw ConfigError("LrSchedule: patience must be >= 1");
  LrSchedule s;
  s.kind = Kind::plateau;
  s.lr0 = s.lr = lr0;
  s.factor = factor;
  s.patience = patience;
  return s;
}

double schedule_update(LrSchedule& s, int epoch, double validation_loss) {
  switch (s.kind) {
    case LrSchedule::Kind::constant: s.lr = s.lr0; break;
    case LrSchedule::Kind::step_halving:
      s.lr = s.lr0 * std::ldexp(1.0, -(std::max(epoch, 0) / s.period));
      break;
    case LrSchedule::Kind::plateau:
      if (validation_loss < s.best) {
        s.best = validation_loss;
        s.bad_epochs = 0;
      } else if (++s.bad_epochs >= s.patience) {
        s.lr *= s.factor;
        s.bad_epochs = 0;
      }
      break;
  }
  return s.lr;
}

namespace {
constexpr std::uint32_t kMlpVersion = 1;
}

void write_mlp(io::Writer& w, const Mlp& net) {
  w.magic("LTNN");
  w.u32(kMlpVersion);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.in_dim()));
    w.u32(static_cast<std::uint32_t>(l.out_dim()));
    w.u32(static_cast<std::uint32_t>(l.activation));
    w.matrix(l.weight);
    w.vector(l.bias);
  }
}

Mlp read_mlp(io::Reader& r) {
  r.expect_magic("LTNN");
  const auto version = r.u32();
  if (version != kMlpVersion) throw IoError("LTNN: unsupported version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    DenseLayer l;
    const auto in = r.u32();
    const auto out = r.u32();
    const auto act = r.u32();
    if (act > 3) throw IoError("LTNN: invalid activation id");
    l.activation = static_cast<Activation>(act);
    l.weight = r.matrix(out, in);
    l.bias = r.vector(out);
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  io::Writer w(path);
  write_mlp(w, net);
  w.close();
}

Mlp load_mlp(const std::filesystem::path& path) {
  io::Reader r(path);
  return read_mlp(r);
}

}  // namespace latwin
