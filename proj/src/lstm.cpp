#include <cmath>

#include "latwin/baselines.hpp"

namespace latwin {

std::size_t LstmModel::formula_count(int n_x, int hidden) {
  const auto h = static_cast<std::size_t>(hidden), n = static_cast<std::size_t>(n_x);
  return 4 * (h * h + h * n + h) + h * n + n;
}

std::size_t LstmModel::parameter_count() const {
  return static_cast<std::size_t>(wx.size() + wh.size() + b.size() + wout.size() + bout.size());
}

ParamSpans LstmModel::parameters() {
  return {{wx.data(), static_cast<std::size_t>(wx.size())},
          {wh.data(), static_cast<std::size_t>(wh.size())},
          {b.data(), static_cast<std::size_t>(b.size())},
          {wout.data(), static_cast<std::size_t>(wout.size())},
          {bout.data(), static_cast<std::size_t>(bout.size())}};
}

void LstmModel::validate() const {
  const Eigen::Index h = hidden;
  if (n_x < 1 || hidden < 1) throw ConfigError("LstmModel: dimensions must be positive");
  if (wx.rows() != 4 * h || wx.cols() != n_x || wh.rows() != 4 * h || wh.cols() != h || b.size() != 4 * h ||
      wout.rows() != n_x || wout.cols() != h || bout.size() != n_x)
    throw DimensionError("LstmModel: inconsistent weight shapes");
}

LstmGrad LstmGrad::zeros_like(const LstmModel& m) {
  LstmGrad g;
  g.wx = Matrix::Zero(m.wx.rows(), m.wx.cols());
  g.wh = Matrix::Zero(m.wh.rows(), m.wh.cols());
  g.b = Vector::Zero(m.b.size());
  g.wout = Matrix::Zero(m.wout.rows(), m.wout.cols());
  g.bout = Vector::Zero(m.bout.size());
  return g;
}

ConstParamSpans LstmGrad::spans() const {
  return {{wx.data(), static_cast<std::size_t>(wx.size())},
          {wh.data(), static_cast<std::size_t>(wh.size())},
          {b.data(), static_cast<std::size_t>(b.size())},
          {wout.data(), static_cast<std::size_t>(wout.size())},
          {bout.data(), static_cast<std::size_t>(bout.size())}};
}

LstmModel make_lstm(int n_x, int hidden, std::uint64_t seed) {
  if (n_x < 1 || hidden < 1) throw ConfigError("make_lstm: dimensions must be positive");
  LstmModel m;
  m.n_x = n_x;
  m.hidden = hidden;
  m.wx.resize(4 * hidden, n_x);
  m.wh.resize(4 * hidden, hidden);
  m.b.resize(4 * hidden);
  m.wout.resize(n_x, hidden);
  m.bout.resize(n_x);
  m.norm = NormStats::identity(n_x);
  RngStream rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto span : m.parameters())
    for (double& w : span) w = rng.uniform(-k, k);
  return m;
}

LstmWindows make_windows(const Trajectory& traj, int window) {
  if (window < 1) throw ConfigError("make_windows: window must be positive");
  if (traj.size() <= static_cast<std::size_t>(window)) throw ConfigError("make_windows: trajectory shorter than the window");
  const Eigen::Index n = traj.states.front().size();
  LstmWindows w;
  w.window = window;
  const std::size_t count = traj.size() - static_cast<std::size_t>(window);
  w.targets.resize(static_cast<Eigen::Index>(count), n);
  for (std::size_t s = 0; s < count; ++s) {
    Matrix in(window, n);
    for (int k = 0; k < window; ++k) in.row(k) = traj.states[s + static_cast<std::size_t>(k)].transpose();
    w.inputs.push_back(std::move(in));
    w.targets.row(static_cast<Eigen::Index>(s)) = traj.states[s + static_cast<std::size_t>(window)].transpose();
  }
  return w;
}

namespace {

Matrix sigmoid(const Matrix& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

struct StepCache {
  Matrix x, h_prev, c_prev, i, f, g, o, c, tc;
};

struct LstmPass {
  std::vector<StepCache> steps;
  Matrix h;
  Matrix y;
};

LstmPass run(const LstmModel& m, const std::vector<const Matrix*>& windows, bool keep) {
  m.validate();
  const auto B = static_cast<Eigen::Index>(windows.size());
  if (B == 0) throw ConfigError("lstm: empty batch");
  const Eigen::Index T = windows.front()->rows(), h = m.hidden;
  LstmPass p;
  Matrix H = Matrix::Zero(B, h), C = Matrix::Zero(B, h);
  for (Eigen::Index t = 0; t < T; ++t) {
    Matrix X(B, m.n_x);
    for (Eigen::Index r = 0; r < B; ++r) {
      const Matrix& w = *windows[static_cast<std::size_t>(r)];
      if (w.rows() != T || w.cols() != m.n_x) throw DimensionError("lstm: window shape mismatch");
      X.row(r) = w.row(t);
    }
    Matrix a = X * m.wx.transpose() + H * m.wh.transpose();
    a.rowwise() += m.b.transpose();
    StepCache s;
    s.i = sigmoid(a.leftCols(h));
    s.f = sigmoid(a.middleCols(h, h));
    s.g = a.middleCols(2 * h, h).array().tanh().matrix();
    s.o = sigmoid(a.rightCols(h));
    s.c = s.f.cwiseProduct(C) + s.i.cwiseProduct(s.g);
    s.tc = s.c.array().tanh().matrix();
    Matrix Hn = s.o.cwiseProduct(s.tc);
    if (keep) {
      s.x = std::move(X);
      s.h_prev = H;
      s.c_prev = C;
    }
    C = s.c;
    H = std::move(Hn);
    if (keep) p.steps.push_back(std::move(s));
  }
  p.h = H;
  p.y = H * m.wout.transpose();
  p.y.rowwise() += m.bout.transpose();
  if (!p.y.allFinite()) throw NumericalError("lstm: non-finite output");
  return p;
}

}  // namespace

Matrix lstm_forward(const LstmModel& m, const std::vector<const Matrix*>& windows) {
  return run(m, windows, false).y;
}

double lstm_loss_grad(const LstmModel& m, const std::vector<const Matrix*>& windows, const Matrix& targets,
                      LstmGrad* grad) {
  LstmPass p = run(m, windows, grad != nullptr);
  if (targets.rows() != p.y.rows() || targets.cols() != p.y.cols()) throw DimensionError("lstm: target shape mismatch");
  const Matrix diff = p.y - targets;
  const double scale = 1.0 / static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() * scale;
  if (!grad) return loss;
  const Eigen::Index h = m.hidden;
  const Matrix dy = 2.0 * scale * diff;
  grad->wout += dy.transpose() * p.h;
  grad->bout += dy.colwise().sum().transpose();
  Matrix dh = dy * m.wout;
  Matrix dc = Matrix::Zero(dh.rows(), h);
  Matrix da(dh.rows(), 4 * h);
  for (std::size_t k = p.steps.size(); k-- > 0;) {
    const StepCache& s = p.steps[k];
    const Matrix d_o = dh.cwiseProduct(s.tc);
    dc += dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tc.array().square()).matrix());
    const Matrix di = dc.cwiseProduct(s.g);
    const Matrix dg = dc.cwiseProduct(s.i);
    const Matrix df = dc.cwiseProduct(s.c_prev);
    da.leftCols(h) = (di.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    da.middleCols(h, h) = (df.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    da.middleCols(2 * h, h) = (dg.array() * (1.0 - s.g.array().square())).matrix();
    da.rightCols(h) = (d_o.array() * s.o.array() * (1.0 - s.o.array())).matrix();
    grad->wx += da.transpose() * s.x;
    grad->wh += da.transpose() * s.h_prev;
    grad->b += da.colwise().sum().transpose();
    dh = da * m.wh;
    dc = dc.cwiseProduct(s.f);
  }
  return loss;
}

LstmTrainResult lstm_train(const Trajectory& traj, const LstmTrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size == 0 || !(cfg.lr > 0) || !(cfg.train_fraction > 0 && cfg.train_fraction <= 1))
    throw ConfigError("lstm_train: invalid configuration");
  traj.validate();
  const auto n = static_cast<int>(traj.states.front().size());
  // Normalization statistics from the whole trajectory.
  Matrix all(static_cast<Eigen::Index>(traj.size()), n);
  for (std::size_t k = 0; k < traj.size(); ++k) all.row(static_cast<Eigen::Index>(k)) = traj.states[k].transpose();
  NormStats norm = NormStats::identity(n);
  norm.state_mean = all.colwise().mean().transpose();
  norm.state_std = (all.rowwise() - norm.state_mean.transpose()).cwiseAbs2().colwise().mean().cwiseSqrt().transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(norm.state_std(i) > 1e-12)) norm.state_std(i) = 1.0;
  Trajectory normed = traj;
  for (auto& s : normed.states) s = norm.normalize_state(s);

  const LstmWindows w = make_windows(normed, cfg.window);
  LstmTrainResult res;
  res.model = make_lstm(n, cfg.hidden, cfg.seed);
  res.model.norm = norm;
  RngStream rng = RngStream(cfg.seed).fork(3);
  std::vector<std::size_t> idx(w.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  rng.shuffle(idx);
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(idx.size()))));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, idx.size())));
  std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(train.size()), idx.end());

  auto batch = [&](const std::vector<std::size_t>& rows, std::size_t start, std::size_t stop) {
    std::vector<const Matrix*> ws;
    Matrix tg(static_cast<Eigen::Index>(stop - start), n);
    for (std::size_t k = start; k < stop; ++k) {
      ws.push_back(&w.inputs[rows[k]]);
      tg.row(static_cast<Eigen::Index>(k - start)) = w.targets.row(static_cast<Eigen::Index>(rows[k]));
    }
    return std::make_pair(ws, tg);
  };

  AdamState adam;
  adam.lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train);
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train.size(), start + cfg.batch_size);
      auto [ws, tg] = batch(train, start, stop);
      LstmGrad g = LstmGrad::zeros_like(res.model);
      const double loss = lstm_loss_grad(res.model, ws, tg, &g);
      if (!std::isfinite(loss)) throw NumericalError("lstm_train: NaN loss at epoch " + std::to_string(epoch));
      total += loss * static_cast<double>(stop - start);
      adam_step(adam, res.model.parameters(), g.spans());
    }
    res.train_loss.push_back(total / static_cast<double>(train.size()));
    if (!val.empty()) {
      auto [ws, tg] = batch(val, 0, val.size());
      res.val_loss.push_back(lstm_loss_grad(res.model, ws, tg, nullptr));
    }
  }
  return res;
}

std::vector<Vector> lstm_rollout(const LstmModel& m, const std::vector<Vector>& seed_states, int window,
                                 std::size_t steps) {
  if (window < 1 || seed_states.size() < static_cast<std::size_t>(window))
    throw ConfigError("lstm_rollout: need at least `window` seed states");
  std::vector<Vector> hist;
  for (std::size_t k = seed_states.size() - static_cast<std::size_t>(window); k < seed_states.size(); ++k)
    hist.push_back(m.norm.normalize_state(seed_states[k]));
  std::vector<Vector> out;
  Matrix win(window, m.n_x);
  for (std::size_t s = 0; s < steps; ++s) {
    for (int k = 0; k < window; ++k) win.row(k) = hist[hist.size() - static_cast<std::size_t>(window - k)].transpose();
    const Vector next = lstm_forward(m, {&win}).row(0).transpose();
    if (!next.allFinite()) throw NumericalError("lstm_rollout: non-finite state");
    hist.push_back(next);
    out.push_back(m.norm.denormalize_state(next));
  }
  return out;
}

namespace {
constexpr std::uint32_t kLstmVersion = 1;
}

void save_lstm(const std::filesystem::path& path, const LstmModel& m) {
  m.validate();
  io::Writer w(path);
  w.magic("LTLS");
  w.u32(kLstmVersion);
  w.u32(static_cast<std::uint32_t>(m.n_x));
  w.u32(static_cast<std::uint32_t>(m.hidden));
  w.vector(m.norm.state_mean);
  w.vector(m.norm.state_std);
  w.matrix(m.wx);
  w.matrix(m.wh);
  w.vector(m.b);
  w.matrix(m.wout);
  w.vector(m.bout);
  w.close();
}

LstmModel load_lstm(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("LTLS");
  if (r.u32() != kLstmVersion) throw IoError("LTLS: unsupported version");
  LstmModel m;
  m.n_x = static_cast<int>(r.u32());
  m.hidden = static_cast<int>(r.u32());
  if (m.n_x < 1 || m.hidden < 1 || m.n_x > 100000 || m.hidden > 100000) throw IoError("LTLS: implausible sizes");
  m.norm = NormStats::identity(m.n_x);
  m.norm.state_mean = r.vector(m.n_x);
  m.norm.state_std = r.vector(m.n_x);
  m.wx = r.matrix(4 * m.hidden, m.n_x);
  m.wh = r.matrix(4 * m.hidden, m.hidden);
  m.b = r.vector(4 * m.hidden);
  m.wout = r.matrix(m.n_x, m.hidden);
  m.bout = r.vector(m.n_x);
  m.validate();
  return m;
}

}  // namespace latwin
