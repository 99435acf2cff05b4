#include <algorithm>
#include <cmath>

#include "latwin/baselines.hpp"

namespace latwin {

std::size_t DeepOnetModel::parameter_count() const {
  return branch.parameter_count() + trunk.parameter_count() + static_cast<std::size_t>(heads.size());
}

void DeepOnetModel::validate() const {
  if (branch.empty() || trunk.empty()) throw ConfigError("DeepOnetModel: missing branch or trunk");
  if (trunk.in_dim() != 3) throw DimensionError("DeepOnetModel: trunk takes (chi1, chi2, t)");
  if (branch.out_dim() != trunk.out_dim() || heads.rows() != 3 || heads.cols() != branch.out_dim())
    throw DimensionError("DeepOnetModel: branch/trunk/head dimensions disagree");
  if (norm.dim() != branch.in_dim()) throw DimensionError("DeepOnetModel: normalization size mismatch");
}

DeepOnetModel make_deeponet(Eigen::Index n_x, std::vector<int> branch_hidden, std::vector<int> trunk_hidden,
                            int latent, const NormStats& norm, double half_width, double t_max,
                            std::uint64_t seed) {
  if (latent < 1 || n_x < 1) throw ConfigError("make_deeponet: sizes must be positive");
  RngStream rng(seed);
  auto build = [&](int in, const std::vector<int>& hidden) {
    std::vector<int> widths{in};
    std::vector<Activation> acts;
    for (int w : hidden) {
      widths.push_back(w);
      acts.push_back(Activation::relu);
    }
    widths.push_back(latent);
    acts.push_back(Activation::identity);
    return Mlp::xavier(widths, acts, rng);
  };
  DeepOnetModel m;
  m.branch = build(static_cast<int>(n_x), branch_hidden);
  m.trunk = build(3, trunk_hidden);
  m.heads.resize(3, latent);
  const double k = 1.0 / std::sqrt(static_cast<double>(latent));
  for (Eigen::Index i = 0; i < m.heads.size(); ++i) m.heads.data()[i] = rng.uniform(-k, k);
  m.norm = norm.dim() == n_x ? norm : NormStats::identity(n_x);
  m.half_width = half_width;
  m.t_max = t_max;
  m.validate();
  return m;
}

namespace {

Matrix scale_queries(const DeepOnetModel& m, const Matrix& q) {
  Matrix s(q.rows(), 3);
  s.col(0) = q.col(0) / m.half_width;
  s.col(1) = q.col(1) / m.half_width;
  s.col(2) = (2.0 / m.t_max) * q.col(2).array() - 1.0;
  return s;
}

// Rows: queries; columns: channels.
Matrix combine(const Matrix& heads, const Vector& b, const Matrix& T) {
  return (T.array().rowwise() * b.transpose().array()).matrix() * heads.transpose();
}

}  // namespace

Matrix deeponet_evaluate(const DeepOnetModel& m, const Vector& x0_std, const Matrix& queries) {
  m.validate();
  if (x0_std.size() != m.branch.in_dim()) throw DimensionError("deeponet_evaluate: initial state size mismatch");
  if (queries.cols() != 3) throw DimensionError("deeponet_evaluate: queries are (chi1, chi2, t) rows");
  const Vector b = infer(m.branch, x0_std);
  const Matrix T = infer(m.trunk, scale_queries(m, queries));
  return combine(m.heads, b, T);
}

SweState deeponet_field(const DeepOnetModel& m, const SweState& x0, double t, const SweConfig& cfg) {
  const int ny = cfg.ny, nx = cfg.nx;
  Matrix q(static_cast<Eigen::Index>(ny) * nx, 3);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) q.row(static_cast<Eigen::Index>(j) * nx + i) << cfg.x_center(i), cfg.y_center(j), t;
  const Matrix out = deeponet_evaluate(m, m.norm.normalize_state(x0.flatten()), q);
  const Eigen::Index n = static_cast<Eigen::Index>(ny) * nx;
  Vector flat(3 * n);
  for (int c = 0; c < 3; ++c) flat.segment(c * n, n) = out.col(c);
  return SweState::unflatten(m.norm.denormalize_state(flat), ny, nx, t);
}

namespace {

struct Standardized {
  Vector x0;
  std::vector<double> times;
  std::vector<Vector> snaps;
};

struct QuerySet {
  Matrix raw;                        // Q x 3 physical
  std::vector<std::size_t> snap;     // snapshot index
  std::vector<Eigen::Index> cell;    // j * nx + i
};

QuerySet draw_queries(RngStream& rng, std::size_t Q, std::size_t n_snaps, const std::vector<double>& times,
                      const SweConfig& cfg) {
  QuerySet qs;
  qs.raw.resize(static_cast<Eigen::Index>(Q), 3);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto k = rng.below(n_snaps);
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.ny)));
    const auto i = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.nx)));
    qs.snap.push_back(k);
    qs.cell.push_back(static_cast<Eigen::Index>(j) * cfg.nx + i);
    qs.raw.row(static_cast<Eigen::Index>(q)) << cfg.x_center(i), cfg.y_center(j), times[k];
  }
  return qs;
}

// Loss over a batch of trajectories sharing one query set; accumulates
// gradients when the pointers are non-null.
double batch_loss(DeepOnetModel& m, const std::vector<const Standardized*>& batch, const QuerySet& qs,
                  Eigen::Index n_cells, MlpGrad* gb, MlpGrad* gt, Matrix* gh) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto Q = static_cast<Eigen::Index>(qs.snap.size());
  Matrix X0(B, m.branch.in_dim());
  for (Eigen::Index b = 0; b < B; ++b) X0.row(b) = batch[static_cast<std::size_t>(b)]->x0.transpose();
  auto fb = forward(m.branch, X0);
  auto ft = forward(m.trunk, scale_queries(m, qs.raw));
  const Matrix& Bm = fb.output;
  const Matrix& Tm = ft.output;
  const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(Q) * 3.0);
  double loss = 0.0;
  Matrix dB = Matrix::Zero(Bm.rows(), Bm.cols()), dT = Matrix::Zero(Tm.rows(), Tm.cols());
  for (int c = 0; c < 3; ++c) {
    const Matrix Bh = (Bm.array().rowwise() * m.heads.row(c).array()).matrix();
    Matrix G = Bh * Tm.transpose();  // B x Q prediction, then residual
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& s = *batch[static_cast<std::size_t>(b)];
      for (Eigen::Index q = 0; q < Q; ++q)
        G(b, q) -= s.snaps[qs.snap[static_cast<std::size_t>(q)]](c * n_cells + qs.cell[static_cast<std::size_t>(q)]);
    }
    loss += G.squaredNorm() * scale;
    if (!gb) continue;
    G *= 2.0 * scale;
    const Matrix GT = G * Tm;  // B x p
    dB += (GT.array().rowwise() * m.heads.row(c).array()).matrix();
    dT += ((G.transpose() * Bm).array().rowwise() * m.heads.row(c).array()).matrix();
    gh->row(c) += GT.cwiseProduct(Bm).colwise().sum();
  }
  if (gb) {
    backward(fb.tape, dB, *gb);
    backward(ft.tape, dT, *gt);
  }
  return loss;
}

}  // namespace

DeepOnetTrainResult deeponet_train(const std::vector<OperatorSample>& data, const SweConfig& cfg,
                                   const DeepOnetTrainConfig& tc, std::optional<NormStats> norm) {
  if (data.empty()) throw ConfigError("deeponet_train: no trajectories");
  if (tc.epochs < 0 || tc.batch_size == 0 || tc.queries == 0 || !(tc.lr > 0) ||
      !(tc.train_fraction > 0 && tc.train_fraction <= 1))
    throw ConfigError("deeponet_train: invalid configuration");
  const Eigen::Index n = cfg.state_size();
  const Eigen::Index n_cells = n / 3;
  const std::size_t n_snaps = data.front().snapshots.size();
  if (n_snaps == 0) throw ConfigError("deeponet_train: trajectories without snapshots");
  std::vector<double> times;
  for (const auto& s : data.front().snapshots) times.push_back(s.t);
  for (const auto& d : data)
    if (d.snapshots.size() != n_snaps || d.x0.flatten().size() != n)
      throw DimensionError("deeponet_train: trajectories differ in length or grid");

  DeepOnetTrainResult res;
  RngStream rng(tc.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  RngStream split_rng = rng.fork(1);
  split_rng.shuffle(order);
  std::size_t n_train = static_cast<std::size_t>(std::llround(tc.train_fraction * static_cast<double>(data.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size());
  res.train_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  res.test_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  if (!norm) {
    // Per-channel statistics over every training snapshot.
    NormStats s = NormStats::identity(n);
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0, sq = 0.0, count = 0.0;
      for (auto k : res.train_index)
        for (const auto& snap : data[k].snapshots) {
          const Vector f = snap.flatten().segment(c * n_cells, n_cells);
          sum += f.sum();
          sq += f.squaredNorm();
          count += static_cast<double>(n_cells);
        }
      const double mean = sum / count;
      double sd = std::sqrt(std::max(0.0, sq / count - mean * mean));
      if (!(sd > 1e-12)) sd = 1.0;
      s.state_mean.segment(c * n_cells, n_cells).setConstant(mean);
      s.state_std.segment(c * n_cells, n_cells).setConstant(sd);
    }
    norm = s;
  }
  const double t_max = std::max(times.back(), 1e-12);
  res.model = make_deeponet(n, tc.branch_hidden, tc.trunk_hidden, tc.latent, *norm, cfg.half_width, t_max,
                            rng.fork(2).seed());

  std::vector<Standardized> sd(data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    sd[k].x0 = norm->normalize_state(data[k].x0.flatten());
    sd[k].times = times;
    for (const auto& snap : data[k].snapshots) sd[k].snaps.push_back(norm->normalize_state(snap.flatten()));
  }

  AdamState adam;
  adam.lr = tc.lr;
  MlpGrad gb = MlpGrad::zeros_like(res.model.branch), gt = MlpGrad::zeros_like(res.model.trunk);
  Matrix gh(3, tc.latent);
  RngStream query_rng = rng.fork(3), shuffle_rng = rng.fork(4);
  RngStream test_rng = rng.fork(5);
  const QuerySet test_queries = draw_queries(test_rng, tc.queries, n_snaps, times, cfg);
  std::vector<std::size_t> train = res.train_index;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(train);
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(train.size(), start + tc.batch_size);
      std::vector<const Standardized*> batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&sd[train[k]]);
      const QuerySet qs = draw_queries(query_rng, tc.queries, n_snaps, times, cfg);
      gb.set_zero();
      gt.set_zero();
      gh.setZero();
      const double loss = batch_loss(res.model, batch, qs, n_cells, &gb, &gt, &gh);
      if (!std::isfinite(loss)) throw NumericalError("deeponet_train: NaN loss at epoch " + std::to_string(epoch));
      total += loss * static_cast<double>(stop - start);
      ParamSpans params = res.model.branch.parameters();
      ParamSpans pt = res.model.trunk.parameters();
      params.insert(params.end(), pt.begin(), pt.end());
      params.emplace_back(res.model.heads.data(), static_cast<std::size_t>(res.model.heads.size()));
      ConstParamSpans grads = gb.spans();
      ConstParamSpans gts = gt.spans();
      grads.insert(grads.end(), gts.begin(), gts.end());
      grads.emplace_back(gh.data(), static_cast<std::size_t>(gh.size()));
      adam_step(adam, params, grads);
    }
    res.train_loss.push_back(total / static_cast<double>(train.size()));
    if (!res.test_index.empty()) {
      std::vector<const Standardized*> batch;
      for (auto k : res.test_index) batch.push_back(&sd[k]);
      res.test_loss.push_back(batch_loss(res.model, batch, test_queries, n_cells, nullptr, nullptr, nullptr));
    }
  }
  return res;
}

namespace {
constexpr std::uint32_t kDeepOnetVersion = 1;
}

void save_deeponet(const std::filesystem::path& path, const DeepOnetModel& m) {
  m.validate();
  io::Writer w(path);
  w.magic("LTDO");
  w.u32(kDeepOnetVersion);
  w.u32(static_cast<std::uint32_t>(m.branch.in_dim()));
  w.u32(static_cast<std::uint32_t>(m.heads.cols()));
  w.f64(m.half_width);
  w.f64(m.t_max);
  w.vector(m.norm.state_mean);
  w.vector(m.norm.state_std);
  write_mlp(w, m.branch);
  write_mlp(w, m.trunk);
  w.matrix(m.heads);
  w.close();
}

DeepOnetModel load_deeponet(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("LTDO");
  if (r.u32() != kDeepOnetVersion) throw IoError("LTDO: unsupported version");
  const auto n = r.u32();
  const auto p = r.u32();
  if (n == 0 || p == 0 || n > 100'000'000 || p > 1'000'000) throw IoError("LTDO: implausible sizes");
  DeepOnetModel m;
  m.half_width = r.f64();
  m.t_max = r.f64();
  m.norm = NormStats::identity(n);
  m.norm.state_mean = r.vector(n);
  m.norm.state_std = r.vector(n);
  m.branch = read_mlp(r);
  m.trunk = read_mlp(r);
  m.heads = r.matrix(3, p);
  m.validate();
  return m;
}

}  // namespace latwin
