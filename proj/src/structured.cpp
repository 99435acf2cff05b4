#include "latwin/structured.hpp"

#include <cmath>

namespace latwin {

StructuredMap StructuredMap::fixed(Matrix W, std::optional<Matrix> U) {
  require_square(W, "StructuredMap::fixed");
  StructuredMap m;
  m.basis = U ? *U : Matrix::Identity(W.rows(), W.rows());
  m.generator = std::move(W);
  m.validate();
  return m;
}

void StructuredMap::validate() const {
  const Eigen::Index r = basis.cols();
  if (!hypernet && (generator.rows() != r || generator.cols() != r))
    throw DimensionError("StructuredMap: generator must be r x r");
  if (hypernet) {
    if (hypernet->out_dim() != r * r || hypernet->in_dim() != basis.rows() + 2)
      throw DimensionError("StructuredMap: hypernet must map n+2 inputs to r*r outputs");
    if (input_mean.size() != basis.rows() + 2 || input_std.size() != basis.rows() + 2)
      throw DimensionError("StructuredMap: hypernet input scaling has wrong size");
  }
  require_finite(basis, "StructuredMap basis");
  if (!hypernet) require_finite(generator, "StructuredMap generator");
  const double orth = (basis.transpose() * basis - Matrix::Identity(r, r)).norm();
  if (orth > 1e-10) throw ConfigError("StructuredMap: basis columns are not orthonormal");
}

namespace {

Vector hypernet_input(const StructuredMap& map, const Vector& x1, double t1, double t2) {
  Vector in(x1.size() + 2);
  in << x1, t1, t2;
  return ((in - map.input_mean).array() / map.input_std.array()).matrix();
}

Matrix reshape_generator(const Vector& flat, Eigen::Index r) {
  return Eigen::Map<const Matrix>(flat.data(), r, r);
}

}  // namespace

Matrix generator_at(const StructuredMap& map, const Vector& x1, double t1, double t2) {
  if (!map.hypernet) return map.generator;
  return reshape_generator(infer(*map.hypernet, hypernet_input(map, x1, t1, t2)), map.latent_dim());
}

Vector structured_evaluate(const StructuredMap& map, const Vector& x1, double t1, double t2) {
  if (x1.size() != map.state_dim()) throw DimensionError("structured_evaluate: state dimension mismatch");
  const Matrix W = generator_at(map, x1, t1, t2);
  const Vector z1 = map.basis.transpose() * x1;
  return map.basis * (expm((t2 - t1) * W) * z1);
}

namespace {

// Loss contribution of one sample plus dL/dW for that sample, where the loss
// is scale * |U exp(hW) U^T x1 - x2|^2.
double sample_loss_grad(const Matrix& U, const Matrix& W, const Vector& x1, const Vector& x2,
                        double h, double scale, Matrix* dW) {
  const Vector z1 = U.transpose() * x1;
  if (!dW) {
    const Vector res = U * (expm(h * W) * z1) - x2;
    return scale * res.squaredNorm();
  }
  // d/dE of scale |U E z1 - x2|^2 is G = 2 scale U^T res z1^T, and
  // dL/dW = h L(h W^T, G). One block exponential yields exp(hW)^T and L.
  const Matrix hWt = h * W.transpose();
  const Matrix Et = expm(hWt);
  const Vector res = U * (Et.transpose() * z1) - x2;
  const Matrix G = 2.0 * scale * (U.transpose() * res) * z1.transpose();
  *dW = h * expm_frechet(hWt, G);
  return scale * res.squaredNorm();
}

}  // namespace

double structured_loss(const StructuredMap& map, const PairDataset& ds,
                       std::span<const std::size_t> rows, Matrix* grad_generator) {
  if (ds.normalized) throw ConfigError("structured_loss: dataset must be in physical units");
  if (ds.n_x != map.state_dim()) throw DimensionError("structured_loss: dimension mismatch");
  if (map.hypernet && grad_generator) throw ConfigError("structured_loss: generator gradient needs a fixed W");
  if (rows.empty()) return 0.0;
  const double scale = 1.0 / (static_cast<double>(rows.size()) * static_cast<double>(ds.n_x));
  double loss = 0.0;
  if (grad_generator) grad_generator->setZero(map.latent_dim(), map.latent_dim());
  Matrix dW;
  for (auto idx : rows) {
    const auto j = static_cast<Eigen::Index>(idx);
    const Vector x1 = ds.x1.row(j).transpose();
    const Vector x2 = ds.x2.row(j).transpose();
    const double h = ds.t2(j) - ds.t1(j);
    const Matrix W = generator_at(map, x1, ds.t1(j), ds.t2(j));
    loss += sample_loss_grad(map.basis, W, x1, x2, h, scale, grad_generator ? &dW : nullptr);
    if (grad_generator) *grad_generator += dW;
  }
  return loss;
}

StructuredTrainResult train_structured(const PairDataset& ds, Eigen::Index r,
                                       std::optional<HypernetArch> hypernet,
                                       const StructuredTrainConfig& cfg, std::optional<Matrix> basis) {
  if (ds.normalized) throw ConfigError("train_structured: dataset must be in physical units");
  if (r < 1 || r > ds.n_x) throw ConfigError("train_structured: latent rank out of range");
  if (cfg.batch_size == 0 || cfg.epochs < 0 || cfg.curriculum_start_gap < 0 || cfg.curriculum_epochs < 0)
    throw ConfigError("train_structured: invalid config");
  const Matrix U = basis ? *basis : Matrix::Identity(ds.n_x, r);
  if (U.rows() != ds.n_x || U.cols() != r) throw DimensionError("train_structured: basis shape mismatch");

  StructuredMap map;
  map.basis = U;
  map.generator = Matrix::Zero(r, r);
  RngStream rng(cfg.seed);
  if (hypernet) {
    std::vector<int> widths{static_cast<int>(ds.n_x + 2)};
    std::vector<Activation> acts;
    for (int w : hypernet->hidden) {
      widths.push_back(w);
      acts.push_back(hypernet->activation);
    }
    widths.push_back(static_cast<int>(r * r));
    acts.push_back(Activation::identity);
    Mlp net = Mlp::xavier(widths, acts, rng);
    // Zero output layer: the map starts as the identity flow.
    net.mutable_layers().back().weight.setZero();
    map.hypernet = std::move(net);
    // Input scaling from the training rows.
    const auto& rows = ds.train.empty() ? ds.test : ds.train;
    Matrix inputs(static_cast<Eigen::Index>(rows.size()), ds.n_x + 2);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto j = static_cast<Eigen::Index>(rows[k]);
      inputs.row(static_cast<Eigen::Index>(k)) << ds.x1.row(j), ds.t1(j), ds.t2(j);
    }
    map.input_mean = inputs.colwise().mean().transpose();
    map.input_std = ((inputs.rowwise() - map.input_mean.transpose()).cwiseAbs2().colwise().mean())
                        .cwiseSqrt()
                        .transpose();
    for (Eigen::Index i = 0; i < map.input_std.size(); ++i)
      if (!(map.input_std(i) > 0)) map.input_std(i) = 1.0;
  }
  map.validate();

  StructuredTrainResult result;
  AdamState adam;
  LrSchedule schedule = cfg.schedule;
  adam.lr = schedule.lr;
  std::vector<std::size_t> order = ds.train;
  RngStream shuffler = rng.fork(1);
  MlpGrad hgrad;
  if (map.hypernet) hgrad = MlpGrad::zeros_like(*map.hypernet);
  const Eigen::Index n_out = r * r;
  double max_gap = 0.0;
  for (auto idx : ds.train) {
    const auto j = static_cast<Eigen::Index>(idx);
    max_gap = std::max(max_gap, std::abs(ds.t2(j) - ds.t1(j)));
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order = ds.train;
    if (cfg.curriculum_start_gap > 0 && epoch < cfg.curriculum_epochs && cfg.curriculum_start_gap < max_gap) {
      const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.curriculum_epochs);
      const double cap = cfg.curriculum_start_gap * std::pow(max_gap / cfg.curriculum_start_gap, frac);
      std::erase_if(order, [&](std::size_t idx) {
        const auto j = static_cast<Eigen::Index>(idx);
        return std::abs(ds.t2(j) - ds.t1(j)) > cap;
      });
    }
    shuffler.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const double scale = 1.0 / (static_cast<double>(rows.size()) * static_cast<double>(ds.n_x));
      double loss = 0.0;
      if (!map.hypernet) {
        Matrix dW;
        loss = structured_loss(map, ds, rows, &dW);
        ParamSpans params{{map.generator.data(), static_cast<std::size_t>(map.generator.size())}};
        ConstParamSpans grads{{dW.data(), static_cast<std::size_t>(dW.size())}};
        adam_step(adam, params, grads);
      } else {
        Matrix inputs(static_cast<Eigen::Index>(rows.size()), ds.n_x + 2);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto j = static_cast<Eigen::Index>(rows[k]);
          inputs.row(static_cast<Eigen::Index>(k)) =
              hypernet_input(map, ds.x1.row(j).transpose(), ds.t1(j), ds.t2(j)).transpose();
        }
        auto fwd = forward(*map.hypernet, inputs);
        Matrix d_out(fwd.output.rows(), n_out);
        Matrix dW;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto j = static_cast<Eigen::Index>(rows[k]);
          const Vector flat = fwd.output.row(static_cast<Eigen::Index>(k)).transpose();
          const Matrix W = reshape_generator(flat, r);
          loss += sample_loss_grad(U, W, ds.x1.row(j).transpose(), ds.x2.row(j).transpose(),
                                   ds.t2(j) - ds.t1(j), scale, &dW);
          d_out.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::RowVectorXd>(dW.data(), n_out);
        }
        hgrad.set_zero();
        backward(fwd.tape, d_out, hgrad);
        adam_step(adam, map.hypernet->parameters(), hgrad.spans());
      }
      if (!std::isfinite(loss)) throw NumericalError("train_structured: NaN loss at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(rows.size());
    }
    epoch_loss /= std::max<std::size_t>(order.size(), 1);
    result.loss_history.push_back(epoch_loss);
    adam.lr = schedule_update(schedule, epoch + 1, epoch_loss);
  }
  result.map = std::move(map);
  return result;
}

Matrix pod_basis(const Matrix& snapshots, Eigen::Index r) {
  if (r < 1 || r > std::min(snapshots.rows(), snapshots.cols()))
    throw ConfigError("pod_basis: requested rank exceeds snapshot dimensions");
  const auto svd = svd_thin(snapshots);
  return svd.U.leftCols(r);
}

double pod_energy(const Matrix& snapshots, Eigen::Index r) {
  const auto svd = svd_thin(snapshots);
  const double total = svd.S.squaredNorm();
  if (total == 0) return 1.0;
  return svd.S.head(std::min<Eigen::Index>(r, svd.S.size())).squaredNorm() / total;
}

Matrix galerkin_generator(const Matrix& M, const Matrix& U) {
  require_square(M, "galerkin_generator");
  if (U.rows() != M.rows()) throw DimensionError("galerkin_generator: basis rows must match M");
  return U.transpose() * M * U;
}

double perturbation_bound(const Matrix& M, const Matrix& W, double H, double x_sup) {
  require_square(M, "perturbation_bound");
  if (W.rows() != M.rows() || W.cols() != M.cols()) throw DimensionError("perturbation_bound: shape mismatch");
  if (!(H > 0)) throw ConfigError("perturbation_bound: H must be positive");
  const Matrix diff = W - M;
  const double dn = spectral_norm(diff);
  const double mn = spectral_norm(M);
  return H * std::exp(H * (mn + dn)) * dn * x_sup;
}

namespace {
constexpr std::uint32_t kStructuredVersion = 1;
}

void write_structured(io::Writer& w, const StructuredMap& map) {
  w.magic("LTSM");
  w.u32(kStructuredVersion);
  w.u32(map.hypernet ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(map.state_dim()));
  w.u32(static_cast<std::uint32_t>(map.latent_dim()));
  w.matrix(map.basis);
  if (map.hypernet) {
    w.vector(map.input_mean);
    w.vector(map.input_std);
    write_mlp(w, *map.hypernet);
  } else {
    w.matrix(map.generator);
  }
}

StructuredMap read_structured(io::Reader& r) {
  r.expect_magic("LTSM");
  if (r.u32() != kStructuredVersion) throw IoError("LTSM: unsupported version");
  const auto kind = r.u32();
  const auto n = static_cast<Eigen::Index>(r.u32());
  const auto rank = static_cast<Eigen::Index>(r.u32());
  StructuredMap map;
  map.basis = r.matrix(n, rank);
  if (kind == 1) {
    map.input_mean = r.vector(n + 2);
    map.input_std = r.vector(n + 2);
    map.hypernet = read_mlp(r);
    map.generator = Matrix::Zero(rank, rank);
  } else if (kind == 0) {
    map.generator = r.matrix(rank, rank);
  } else {
    throw IoError("LTSM: unknown map kind");
  }
  map.validate();
  return map;
}

}  // namespace latwin
