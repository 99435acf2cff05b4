#include "latwin/twin.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace latwin {

std::string_view twin_mode_name(TwinMode mode) {
  switch (mode) {
    case TwinMode::mlp: return "mlp";
    case TwinMode::structured: return "structured";
    case TwinMode::identity_ae: return "identity-ae";
  }
  return "unknown";
}

TwinMode parse_twin_mode(std::string_view name) {
  if (name == "mlp") return TwinMode::mlp;
  if (name == "structured") return TwinMode::structured;
  if (name == "identity-ae" || name == "identity") return TwinMode::identity_ae;
  throw ConfigError("unknown twin mode: " + std::string(name));
}

TwinArchitecture TwinArchitecture::ode_default(Eigen::Index n_x) {
  TwinArchitecture a;
  a.mode = TwinMode::identity_ae;
  a.latent_dim = n_x;
  a.map_hidden = {16, 8, 4};
  a.map_activation = Activation::softmax;
  return a;
}

TwinArchitecture TwinArchitecture::field_default(std::vector<int> encoder_hidden, Eigen::Index latent_dim) {
  TwinArchitecture a;
  a.mode = TwinMode::mlp;
  a.latent_dim = latent_dim;
  a.encoder_hidden = std::move(encoder_hidden);
  a.autoencoder_activation = Activation::relu;
  a.map_hidden = {};
  a.map_activation = Activation::identity;
  return a;
}

std::size_t TwinModel::parameter_count() const {
  std::size_t n = encoder.parameter_count() + latent.parameter_count() + decoder.parameter_count();
  if (structured) {
    n += structured->hypernet ? structured->hypernet->parameter_count()
                              : static_cast<std::size_t>(structured->generator.size());
  }
  return n;
}

void TwinModel::validate() const {
  if (norm.dim() != n_x) throw DimensionError("TwinModel: normalization statistics dimension mismatch");
  switch (mode) {
    case TwinMode::identity_ae:
      if (n_z != n_x || !encoder.empty() || !decoder.empty())
        throw DimensionError("TwinModel: identity-AE mode needs n_z = n_x and no encoder/decoder");
      [[fallthrough]];
    case TwinMode::mlp:
      if (latent.in_dim() != n_z + 2 || latent.out_dim() != n_z)
        throw DimensionError("TwinModel: latent map must map n_z+2 -> n_z");
      if (mode == TwinMode::mlp &&
          (encoder.in_dim() != n_x || encoder.out_dim() != n_z || decoder.in_dim() != n_z ||
           decoder.out_dim() != n_x))
        throw DimensionError("TwinModel: encoder/decoder dimensions inconsistent");
      break;
    case TwinMode::structured:
      if (!structured) throw ConfigError("TwinModel: structured mode without a structured map");
      if (structured->state_dim() != n_x) throw DimensionError("TwinModel: structured map dimension mismatch");
      structured->validate();
      break;
  }
}

TwinModel make_twin(const TwinArchitecture& arch, Eigen::Index n_x, const NormStats& norm,
                    std::uint64_t seed) {
  if (n_x < 1) throw ConfigError("make_twin: state dimension must be positive");
  TwinModel m;
  m.mode = arch.mode;
  m.n_x = n_x;
  m.norm = norm.dim() == n_x ? norm : NormStats::identity(n_x);
  m.residual = arch.residual;
  RngStream rng(seed);

  if (arch.mode == TwinMode::structured) {
    const Eigen::Index r = arch.structured_rank > 0 ? arch.structured_rank : n_x;
    m.n_z = r;
    m.norm = NormStats::identity(n_x);
    m.structured = StructuredMap::fixed(Matrix::Zero(r, r), Matrix::Identity(n_x, r));
    m.validate();
    return m;
  }

  m.n_z = arch.mode == TwinMode::identity_ae ? n_x : arch.latent_dim;
  if (m.n_z < 1) throw ConfigError("make_twin: latent dimension must be positive");
  if (arch.mode == TwinMode::mlp) {
    std::vector<int> widths{static_cast<int>(n_x)};
    std::vector<Activation> acts;
    for (int w : arch.encoder_hidden) {
      widths.push_back(w);
      acts.push_back(arch.autoencoder_activation);
    }
    widths.push_back(static_cast<int>(m.n_z));
    acts.push_back(Activation::identity);
    m.encoder = Mlp::xavier(widths, acts, rng);
    std::reverse(widths.begin(), widths.end());
    m.decoder = Mlp::xavier(widths, acts, rng);
  }
  std::vector<int> widths{static_cast<int>(m.n_z + 2)};
  std::vector<Activation> acts;
  for (int w : arch.map_hidden) {
    widths.push_back(w);
    acts.push_back(arch.map_activation);
  }
  widths.push_back(static_cast<int>(m.n_z));
  acts.push_back(Activation::identity);
  m.latent = Mlp::xavier(widths, acts, rng);
  if (arch.residual) {
    auto& last = m.latent.mutable_layers().back();
    last.weight.setZero();
    last.bias.setZero();
  }
  m.validate();
  return m;
}

Matrix encode(const TwinModel& model, const Matrix& x_normalized) {
  if (x_normalized.cols() != model.n_x) throw DimensionError("encode: state dimension mismatch");
  if (model.mode == TwinMode::mlp) return infer(model.encoder, x_normalized);
  if (model.mode == TwinMode::structured) return x_normalized * model.structured->basis;
  return x_normalized;
}

Matrix decode(const TwinModel& model, const Matrix& z) {
  if (z.cols() != model.n_z) throw DimensionError("decode: latent dimension mismatch");
  if (model.mode == TwinMode::mlp) return infer(model.decoder, z);
  if (model.mode == TwinMode::structured) return z * model.structured->basis.transpose();
  return z;
}

namespace {

Matrix map_input(const Matrix& z, const Vector& tau1, const Vector& tau2) {
  Matrix in(z.rows(), z.cols() + 2);
  in.leftCols(z.cols()) = z;
  in.col(z.cols()) = tau1;
  in.col(z.cols() + 1) = tau2;
  return in;
}

}  // namespace

Matrix latent_step(const TwinModel& model, const Matrix& z, const Vector& tau1, const Vector& tau2) {
  if (z.rows() != tau1.size() || z.rows() != tau2.size()) throw DimensionError("latent_step: batch size mismatch");
  if (model.mode == TwinMode::structured) {
    const auto& sm = *model.structured;
    Matrix out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double t1 = model.norm.denormalize_time(tau1(i));
      const double t2 = model.norm.denormalize_time(tau2(i));
      const Vector x1 = sm.basis * z.row(i).transpose();
      const Matrix W = generator_at(sm, x1, t1, t2);
      out.row(i) = (expm((t2 - t1) * W) * z.row(i).transpose()).transpose();
    }
    return out;
  }
  Matrix out = infer(model.latent, map_input(z, tau1, tau2));
  if (model.residual) out += z;
  return out;
}

Matrix twin_evaluate(const TwinModel& model, const Matrix& x1, const Vector& t1, const Vector& t2) {
  if (x1.cols() != model.n_x) throw DimensionError("twin_evaluate: state dimension mismatch");
  if (x1.rows() != t1.size() || x1.rows() != t2.size()) throw DimensionError("twin_evaluate: batch size mismatch");
  if (model.mode == TwinMode::structured) {
    Matrix out(x1.rows(), x1.cols());
    for (Eigen::Index i = 0; i < x1.rows(); ++i)
      out.row(i) = structured_evaluate(*model.structured, x1.row(i).transpose(), t1(i), t2(i)).transpose();
    return out;
  }
  const Matrix xn = model.norm.normalize_states(x1);
  const Vector tau1 = ((t1.array() - model.norm.time_mean) / model.norm.time_std).matrix();
  const Vector tau2 = ((t2.array() - model.norm.time_mean) / model.norm.time_std).matrix();
  const Matrix z2 = latent_step(model, encode(model, xn), tau1, tau2);
  return model.norm.denormalize_states(decode(model, z2));
}

Vector twin_evaluate(const TwinModel& model, const Vector& x1, double t1, double t2, EvalDiagnostics* diag) {
  require_finite(x1, "twin_evaluate: state");
  if (x1.size() != model.n_x) throw DimensionError("twin_evaluate: state dimension mismatch");
  if (diag) {
    const double slack = 1e-9 * std::max(1.0, std::abs(model.t_max));
    diag->outside_trained_interval = std::min(t1, t2) < model.t_min - slack || std::max(t1, t2) > model.t_max + slack;
  }
  Matrix row = x1.transpose();
  return twin_evaluate(model, row, Vector::Constant(1, t1), Vector::Constant(1, t2)).row(0).transpose();
}

Trajectory twin_rollout(const TwinModel& model, const Vector& x0, double t0, double h, std::size_t steps) {
  if (h == 0.0) throw ConfigError("twin_rollout: step h must be non-zero");
  Trajectory traj;
  traj.times.push_back(t0);
  traj.states.push_back(x0);
  Vector x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    x = twin_evaluate(model, x, t, t + h);
    if (!x.allFinite()) throw NumericalError("twin_rollout: non-finite iterate (divergence)");
    traj.times.push_back(t0 + static_cast<double>(k + 1) * h);
    traj.states.push_back(x);
  }
  if (h < 0) {
    std::reverse(traj.times.begin(), traj.times.end());
    std::reverse(traj.states.begin(), traj.states.end());
  }
  return traj;
}

Matrix twin_recursive(const TwinModel& model, const Matrix& x1, const Vector& t1, const Vector& t2, double h) {
  if (!(h > 0)) throw ConfigError("twin_recursive: step h must be positive");
  if (x1.rows() != t1.size() || x1.rows() != t2.size()) throw DimensionError("twin_recursive: batch size mismatch");
  const Eigen::Index B = x1.rows();
  std::vector<long> nsteps(static_cast<std::size_t>(B));
  long max_steps = 0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double ratio = std::abs(t2(i) - t1(i)) / h;
    nsteps[static_cast<std::size_t>(i)] = static_cast<long>(std::ceil(ratio - 1e-9));
    max_steps = std::max(max_steps, nsteps[static_cast<std::size_t>(i)]);
  }
  Matrix x = x1;
  for (long k = 0; k < max_steps; ++k) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < B; ++i)
      if (k < nsteps[static_cast<std::size_t>(i)]) active.push_back(i);
    const auto A = static_cast<Eigen::Index>(active.size());
    Matrix xa(A, x.cols());
    Vector ta(A), tb(A);
    for (Eigen::Index a = 0; a < A; ++a) {
      const Eigen::Index i = active[static_cast<std::size_t>(a)];
      const double step = (t2(i) - t1(i)) / static_cast<double>(nsteps[static_cast<std::size_t>(i)]);
      xa.row(a) = x.row(i);
      ta(a) = t1(i) + static_cast<double>(k) * step;
      tb(a) = k + 1 == nsteps[static_cast<std::size_t>(i)] ? t2(i) : t1(i) + static_cast<double>(k + 1) * step;
    }
    const Matrix ya = twin_evaluate(model, xa, ta, tb);
    if (!ya.allFinite()) throw NumericalError("twin_recursive: non-finite iterate (divergence)");
    for (Eigen::Index a = 0; a < A; ++a) x.row(active[static_cast<std::size_t>(a)]) = ya.row(a);
  }
  return x;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("TrainConfig: batch size must be positive");
  if (w_rec < 0 || w_pred < 0 || (w_rec == 0 && w_pred == 0))
    throw ConfigError("TrainConfig: loss weights must be >= 0 and not both zero");
  if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be >= 1");
  if (restarts < 1) throw ConfigError("TrainConfig: restarts must be >= 1");
}

std::pair<double, double> twin_mse(const TwinModel& model, const PairDataset& ds,
                                   std::span<const std::size_t> rows) {
  if (!ds.normalized && model.mode != TwinMode::structured)
    throw ConfigError("twin_mse: dataset must be normalized");
  if (rows.empty()) return {0.0, 0.0};
  double rec = 0.0, pred = 0.0;
  constexpr std::size_t chunk = 1024;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t stop = std::min(rows.size(), start + chunk);
    const auto B = static_cast<Eigen::Index>(stop - start);
    Matrix X1(B, ds.n_x), X2(B, ds.n_x);
    Vector tau1(B), tau2(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto j = static_cast<Eigen::Index>(rows[start + static_cast<std::size_t>(i)]);
      X1.row(i) = ds.x1.row(j);
      X2.row(i) = ds.x2.row(j);
      tau1(i) = ds.t1(j);
      tau2(i) = ds.t2(j);
    }
    const Matrix Z = encode(model, X1);
    if (model.mode == TwinMode::mlp) rec += (decode(model, Z) - X1).squaredNorm();
    pred += (decode(model, latent_step(model, Z, tau1, tau2)) - X2).squaredNorm();
  }
  const double denom = static_cast<double>(rows.size()) * static_cast<double>(ds.n_x);
  return {rec / denom, pred / denom};
}

namespace {

TrainResult train_structured_twin(const PairDataset& ds, const TwinArchitecture& arch, const TrainConfig& cfg) {
  const PairDataset phys = denormalize(ds);
  StructuredTrainConfig scfg;
  scfg.epochs = cfg.epochs;
  scfg.batch_size = cfg.batch_size;
  scfg.schedule = cfg.schedule;
  scfg.seed = cfg.seed;
  scfg.curriculum_start_gap = cfg.curriculum_start_gap;
  scfg.curriculum_epochs = cfg.curriculum_epochs;
  const Eigen::Index r = arch.structured_rank > 0 ? arch.structured_rank : phys.n_x;
  auto fitted = train_structured(phys, r, arch.hypernet, scfg);
  TrainResult res;
  res.model.mode = TwinMode::structured;
  res.model.n_x = phys.n_x;
  res.model.n_z = r;
  res.model.norm = NormStats::identity(phys.n_x);
  res.model.structured = std::move(fitted.map);
  res.model.t_min = std::min(phys.t1.minCoeff(), phys.t2.minCoeff());
  res.model.t_max = std::max(phys.t1.maxCoeff(), phys.t2.maxCoeff());
  const double test_loss = structured_loss(*res.model.structured, phys, phys.test);
  for (std::size_t e = 0; e < fitted.loss_history.size(); ++e) {
    EpochMetrics m;
    m.epoch = static_cast<int>(e) + 1;
    m.train_loss = fitted.loss_history[e];
    m.test_pred_mse = e + 1 == fitted.loss_history.size() ? test_loss : std::nan("");
    res.history.push_back(m);
  }
  const std::size_t per_epoch = (phys.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  res.batches = per_epoch * static_cast<std::size_t>(cfg.epochs);
  return res;
}

}  // namespace

namespace {

TrainResult train_once(const PairDataset& ds, const TwinArchitecture& arch, const TrainConfig& cfg);

}  // namespace

TrainResult train_twin(const PairDataset& ds, const TwinArchitecture& arch, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (arch.mode == TwinMode::structured) return train_structured_twin(ds, arch, cfg);
  TrainResult best = train_once(ds, arch, cfg);
  if (best.history.empty()) return best;
  for (int r = 1; r < cfg.restarts; ++r) {
    TrainConfig c = cfg;
    c.seed = RngStream(cfg.seed).fork(static_cast<std::uint64_t>(r)).seed();
    TrainResult res = train_once(ds, arch, c);
    if (res.history.back().train_loss < best.history.back().train_loss) best = std::move(res);
  }
  return best;
}

namespace {

TrainResult train_once(const PairDataset& ds, const TwinArchitecture& arch, const TrainConfig& cfg) {
  if (!ds.normalized) throw ConfigError("train_twin: dataset must be normalized");
  if (ds.train.empty()) throw ConfigError("train_twin: empty training split");

  TrainResult res;
  TwinModel& model = res.model;
  model = make_twin(arch, ds.n_x, ds.norm, cfg.seed);
  {
    const PairDataset phys_times = [&] {
      PairDataset t;
      t.t1 = (ds.t1.array() * ds.norm.time_std + ds.norm.time_mean).matrix();
      t.t2 = (ds.t2.array() * ds.norm.time_std + ds.norm.time_mean).matrix();
      return t;
    }();
    model.t_min = std::min(phys_times.t1.minCoeff(), phys_times.t2.minCoeff());
    model.t_max = std::max(phys_times.t1.maxCoeff(), phys_times.t2.maxCoeff());
  }
  const bool has_ae = model.mode == TwinMode::mlp;
  const Eigen::Index n = ds.n_x, nz = model.n_z;

  AdamState adam;
  LrSchedule schedule = cfg.schedule;
  adam.lr = schedule.lr;
  MlpGrad enc_g = MlpGrad::zeros_like(model.encoder);
  MlpGrad lat_g = MlpGrad::zeros_like(model.latent);
  MlpGrad dec_g = MlpGrad::zeros_like(model.decoder);
  std::vector<std::size_t> order = ds.train;
  RngStream shuffler = RngStream(cfg.seed).fork(11);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffler.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const auto B = static_cast<Eigen::Index>(stop - start);
      Matrix X1(B, n), X2(B, n);
      Vector tau1(B), tau2(B);
      for (Eigen::Index i = 0; i < B; ++i) {
        const auto j = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        X1.row(i) = ds.x1.row(j);
        X2.row(i) = ds.x2.row(j);
        tau1(i) = ds.t1(j);
        tau2(i) = ds.t2(j);
      }
      const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(n));

      ForwardResult fe, fr, fp;
      Matrix Z;
      if (has_ae) {
        fe = forward(model.encoder, X1);
        Z = fe.output;
      } else {
        Z = X1;
      }
      double rec = 0.0;
      Matrix dR;
      if (has_ae && cfg.w_rec > 0) {
        fr = forward(model.decoder, Z);
        const Matrix diff = fr.output - X1;
        rec = diff.squaredNorm() * scale;
        dR = (2.0 * cfg.w_rec * scale) * diff;
      }
      double pred = 0.0;
      Matrix dP;
      ForwardResult fm;
      if (cfg.w_pred > 0) {
        fm = forward(model.latent, map_input(Z, tau1, tau2));
        Matrix M = fm.output;
        if (model.residual) M += Z;
        Matrix P;
        if (has_ae) {
          fp = forward(model.decoder, M);
          P = fp.output;
        } else {
          P = M;
        }
        const Matrix diff = P - X2;
        pred = diff.squaredNorm() * scale;
        dP = (2.0 * cfg.w_pred * scale) * diff;
      }
      const double loss = cfg.w_rec * rec + cfg.w_pred * pred;
      if (!std::isfinite(loss))
        throw NumericalError("train_twin: NaN loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start) + " (reduce the learning rate)");
      epoch_loss += loss * static_cast<double>(B);

      enc_g.set_zero();
      lat_g.set_zero();
      dec_g.set_zero();
      Matrix dZ = Matrix::Zero(B, nz);
      if (cfg.w_pred > 0) {
        const Matrix dM = has_ae ? backward(fp.tape, dP, dec_g) : dP;
        const Matrix dIn = backward(fm.tape, dM, lat_g);
        dZ += dIn.leftCols(nz);
        if (model.residual) dZ += dM;
      }
      if (has_ae) {
        if (cfg.w_rec > 0) dZ += backward(fr.tape, dR, dec_g);
        backward(fe.tape, dZ, enc_g);
      }

      ParamSpans params;
      ConstParamSpans grads;
      auto append = [&](Mlp& net, const MlpGrad& g) {
        if (net.empty()) return;
        auto p = net.parameters();
        auto s = g.spans();
        params.insert(params.end(), p.begin(), p.end());
        grads.insert(grads.end(), s.begin(), s.end());
      };
      append(model.encoder, enc_g);
      append(model.latent, lat_g);
      append(model.decoder, dec_g);
      adam_step(adam, params, grads);
      ++res.batches;
    }
    epoch_loss /= static_cast<double>(order.size());

    const bool evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    double val = epoch_loss;
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = epoch_loss;
    m.lr = adam.lr;
    if (evaluate) {
      const auto [trec, tpred] = twin_mse(model, ds, ds.test.empty() ? ds.train : ds.test);
      m.test_rec_mse = trec;
      m.test_pred_mse = tpred;
      val = cfg.w_rec * trec + cfg.w_pred * tpred;
      res.history.push_back(m);
      if (cfg.on_epoch) cfg.on_epoch(epoch + 1, epoch_loss, tpred);
    }
    adam.lr = schedule_update(schedule, epoch + 1, val);
  }
  return res;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,test_rec_mse,test_pred_mse,lr\n" << std::setprecision(10);
  for (const auto& m : history)
    out << m.epoch << ',' << m.train_loss << ',' << m.test_rec_mse << ',' << m.test_pred_mse << ',' << m.lr << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ErrorBudget diagnose_error_budget(const TwinModel& model, const PairDataset& ds, double flow_lipschitz,
                                  double horizon, std::size_t extra_latent_pairs, std::uint64_t seed) {
  if (ds.test.empty()) throw ConfigError("diagnose_error_budget: empty test set");
  const PairDataset dsn = model.mode == TwinMode::structured ? denormalize(ds)
                          : ds.normalized                     ? ds
                                                              : normalize(ds, model.norm);
  const auto B = static_cast<Eigen::Index>(dsn.test.size());
  Matrix X1(B, dsn.n_x), X2(B, dsn.n_x);
  Vector tau1(B), tau2(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto j = static_cast<Eigen::Index>(dsn.test[static_cast<std::size_t>(i)]);
    X1.row(i) = dsn.x1.row(j);
    X2.row(i) = dsn.x2.row(j);
    tau1(i) = dsn.t1(j);
    tau2(i) = dsn.t2(j);
  }
  ErrorBudget rep;
  rep.flow_lipschitz = flow_lipschitz;
  rep.horizon = horizon;

  const Matrix Z1 = encode(model, X1);
  const Matrix Z2 = encode(model, X2);
  const Matrix ZM = latent_step(model, Z1, tau1, tau2);
  const Matrix DZM = decode(model, ZM);
  const Matrix DZ2 = decode(model, Z2);
  if (model.mode == TwinMode::mlp) {
    const Matrix R1 = decode(model, Z1);
    rep.eps_ae = std::max((R1 - X1).rowwise().norm().maxCoeff(), (DZ2 - X2).rowwise().norm().maxCoeff());
  } else if (model.mode == TwinMode::structured) {
    rep.eps_ae = std::max((decode(model, Z1) - X1).rowwise().norm().maxCoeff(), (DZ2 - X2).rowwise().norm().maxCoeff());
  }
  rep.eps_map = (ZM - Z2).rowwise().norm().maxCoeff();

  double lip = 0.0;
  auto consider = [&lip](const Vector& a, const Vector& b, const Vector& da, const Vector& db) {
    const double dz = (a - b).norm();
    if (dz > 0) lip = std::max(lip, (da - db).norm() / dz);
  };
  for (Eigen::Index i = 0; i < B; ++i)
    consider(ZM.row(i).transpose(), Z2.row(i).transpose(), DZM.row(i).transpose(), DZ2.row(i).transpose());
  RngStream rng(seed);
  const Matrix D1 = decode(model, Z1);
  for (std::size_t k = 0; k < extra_latent_pairs && B > 1; ++k) {
    const auto a = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(B)));
    const auto b = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(B)));
    consider(Z1.row(a).transpose(), Z1.row(b).transpose(), D1.row(a).transpose(), D1.row(b).transpose());
  }
  rep.decoder_lipschitz = lip;
  rep.bound = (1.0 + std::exp(flow_lipschitz * horizon)) * rep.eps_ae + rep.decoder_lipschitz * rep.eps_map;
  const Vector e2e = (DZM - X2).rowwise().norm();
  rep.end_to_end.assign(e2e.data(), e2e.data() + e2e.size());
  rep.max_end_to_end = e2e.maxCoeff();
  return rep;
}

std::vector<HorizonPoint> horizon_error_profile(const TwinModel& model,
                                                const std::function<Vector(double)>& reference,
                                                double t1, double h, std::size_t steps) {
  const Vector x1 = reference(t1);
  const auto K = static_cast<Eigen::Index>(steps + 1);
  Matrix X1(K, model.n_x), truth(K, model.n_x);
  Vector T1 = Vector::Constant(K, t1), T2(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    X1.row(k) = x1.transpose();
    T2(k) = t1 + static_cast<double>(k) * h;
    truth.row(k) = reference(T2(k)).transpose();
  }
  const Matrix direct = twin_evaluate(model, X1, T1, T2);
  Trajectory roll = twin_rollout(model, x1, t1, h, steps);
  if (h < 0) {
    std::reverse(roll.states.begin(), roll.states.end());
  }
  Matrix ae;
  if (model.mode == TwinMode::structured) {
    ae = decode(model, encode(model, truth));
  } else {
    ae = model.norm.denormalize_states(decode(model, encode(model, model.norm.normalize_states(truth))));
  }
  std::vector<HorizonPoint> out;
  for (Eigen::Index k = 0; k < K; ++k) {
    HorizonPoint p;
    p.t2 = T2(k);
    p.gap = std::abs(T2(k) - t1);
    const Vector dd = direct.row(k) - truth.row(k);
    const Vector dr = roll.states[static_cast<std::size_t>(k)] - truth.row(k).transpose();
    p.direct_error = dd.norm();
    p.rollout_error = dr.norm();
    p.direct_sq = dd.squaredNorm() / static_cast<double>(dd.size());
    p.rollout_sq = dr.squaredNorm() / static_cast<double>(dr.size());
    p.autoencoder_error = (ae.row(k) - truth.row(k)).norm();
    out.push_back(p);
  }
  return out;
}

void write_profile_csv(const std::filesystem::path& path, const std::vector<HorizonPoint>& profile) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t2,gap,direct_error,rollout_error,direct_mse,rollout_mse,autoencoder_error\n" << std::setprecision(12);
  for (const auto& p : profile)
    out << p.t2 << ',' << p.gap << ',' << p.direct_error << ',' << p.rollout_error << ',' << p.direct_sq << ','
        << p.rollout_sq << ',' << p.autoencoder_error << '\n';
}

double log_error_slope(const std::vector<HorizonPoint>& profile, bool rollout) {
  std::vector<double> xs, ys;
  for (const auto& p : profile) {
    const double e = rollout ? p.rollout_error : p.direct_error;
    if (p.gap > 0 && e > 0) {
      xs.push_back(p.gap);
      ys.push_back(std::log(e));
    }
  }
  return least_squares_slope(xs, ys);
}

namespace {
constexpr std::uint32_t kTwinVersion = 1;
}

void save_twin(const std::filesystem::path& path, const TwinModel& model) {
  model.validate();
  io::Writer w(path);
  w.magic("LTTW");
  w.u32(kTwinVersion);
  w.u32(static_cast<std::uint32_t>(model.mode));
  w.u32(static_cast<std::uint32_t>(model.n_x));
  w.u32(static_cast<std::uint32_t>(model.n_z));
  w.u32(model.residual ? 1u : 0u);
  w.f64(model.t_min);
  w.f64(model.t_max);
  w.vector(model.norm.state_mean);
  w.vector(model.norm.state_std);
  w.f64(model.norm.time_mean);
  w.f64(model.norm.time_std);
  write_mlp(w, model.encoder);
  if (model.mode == TwinMode::structured)
    write_structured(w, *model.structured);
  else
    write_mlp(w, model.latent);
  write_mlp(w, model.decoder);
  w.close();
}

TwinModel load_twin(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("LTTW");
  if (r.u32() != kTwinVersion) throw IoError("LTTW: unsupported version");
  TwinModel m;
  const auto mode = r.u32();
  if (mode > 2) throw IoError("LTTW: unknown mode");
  m.mode = static_cast<TwinMode>(mode);
  m.n_x = r.u32();
  m.n_z = r.u32();
  m.residual = r.u32() != 0;
  m.t_min = r.f64();
  m.t_max = r.f64();
  m.norm.state_mean = r.vector(m.n_x);
  m.norm.state_std = r.vector(m.n_x);
  m.norm.time_mean = r.f64();
  m.norm.time_std = r.f64();
  m.encoder = read_mlp(r);
  if (m.mode == TwinMode::structured)
    m.structured = read_structured(r);
  else
    m.latent = read_mlp(r);
  m.decoder = read_mlp(r);
  m.validate();
  return m;
}

}  // namespace latwin
