#include "latwin/assimilate.hpp"

#include <algorithm>
#include <cmath>

namespace latwin {

namespace {

void check_factor(int ny, int nx, int factor) {
  if (factor < 1 || ny % factor != 0 || nx % factor != 0)
    throw ConfigError("observation factor " + std::to_string(factor) + " does not divide the " + std::to_string(ny) +
                      "x" + std::to_string(nx) + " grid");
}

Matrix decimate_field(const Matrix& f, int factor) {
  const Eigen::Index cy = f.rows() / factor, cx = f.cols() / factor;
  Matrix c(cy, cx);
  for (Eigen::Index j = 0; j < cy; ++j)
    for (Eigen::Index i = 0; i < cx; ++i) c(j, i) = f(j * factor, i * factor);
  return c;
}

Matrix inject_field(const Matrix& c, int factor, int ny, int nx) {
  Matrix f = Matrix::Zero(ny, nx);
  for (Eigen::Index j = 0; j < c.rows(); ++j)
    for (Eigen::Index i = 0; i < c.cols(); ++i) f(j * factor, i * factor) = c(j, i);
  return f;
}

Matrix upsample_field(const Matrix& c, int factor, int ny, int nx) {
  Matrix f(ny, nx);
  const Eigen::Index cy = c.rows(), cx = c.cols();
  for (int j = 0; j < ny; ++j) {
    const double py = static_cast<double>(j) / factor;
    const auto j0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(py), cy - 1);
    const auto j1 = std::min<Eigen::Index>(j0 + 1, cy - 1);
    const double wy = j0 == j1 ? 0.0 : py - static_cast<double>(j0);
    for (int i = 0; i < nx; ++i) {
      const double px = static_cast<double>(i) / factor;
      const auto i0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(px), cx - 1);
      const auto i1 = std::min<Eigen::Index>(i0 + 1, cx - 1);
      const double wx = i0 == i1 ? 0.0 : px - static_cast<double>(i0);
      f(j, i) = (1 - wy) * ((1 - wx) * c(j0, i0) + wx * c(j0, i1)) + wy * ((1 - wx) * c(j1, i0) + wx * c(j1, i1));
    }
  }
  return f;
}

}  // namespace

SweState decimate(const SweState& fine, int factor) {
  check_factor(fine.ny(), fine.nx(), factor);
  SweState c;
  c.eta = decimate_field(fine.eta, factor);
  c.u = decimate_field(fine.u, factor);
  c.v = decimate_field(fine.v, factor);
  c.t = fine.t;
  return c;
}

SweState decimate_adjoint(const SweState& coarse, int factor, int ny, int nx) {
  check_factor(ny, nx, factor);
  if (coarse.ny() * factor != ny || coarse.nx() * factor != nx)
    throw DimensionError("decimate_adjoint: coarse grid does not match the fine grid");
  SweState f;
  f.eta = inject_field(coarse.eta, factor, ny, nx);
  f.u = inject_field(coarse.u, factor, ny, nx);
  f.v = inject_field(coarse.v, factor, ny, nx);
  f.t = coarse.t;
  return f;
}

SweState standardize(const NormStats& norm, const SweState& s) {
  return SweState::unflatten(norm.normalize_state(s.flatten()), s.ny(), s.nx(), s.t);
}

SweState destandardize(const NormStats& norm, const SweState& s) {
  return SweState::unflatten(norm.denormalize_state(s.flatten()), s.ny(), s.nx(), s.t);
}

Observation observe(const ObsOperator& op, const SweState& standardized) {
  if (op.noise_var < 0) throw ConfigError("observe: noise variance must be >= 0");
  Observation obs;
  obs.factor = op.factor;
  obs.noise_var = op.noise_var;
  obs.y = decimate(standardized, op.factor);
  if (op.noise_var > 0) {
    RngStream rng(op.seed);
    const double sd = std::sqrt(op.noise_var);
    for (Matrix* m : {&obs.y.eta, &obs.y.u, &obs.y.v})
      for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] += rng.gaussian(0.0, sd);
  }
  return obs;
}

SweState bilinear_upsample(const SweState& coarse, int factor, int ny, int nx) {
  check_factor(ny, nx, factor);
  if (coarse.ny() * factor != ny || coarse.nx() * factor != nx)
    throw DimensionError("bilinear_upsample: coarse grid does not match the fine grid");
  SweState f;
  f.eta = upsample_field(coarse.eta, factor, ny, nx);
  f.u = upsample_field(coarse.u, factor, ny, nx);
  f.v = upsample_field(coarse.v, factor, ny, nx);
  f.t = coarse.t;
  return f;
}

LatentInferResult latent_infer(const TwinModel& model, const Observation& obs, int ny, int nx, int iters,
                               double lr) {
  if (model.mode != TwinMode::mlp) throw ConfigError("latent_infer: needs a field twin with an MLP autoencoder");
  if (model.n_x != 3 * static_cast<Eigen::Index>(ny) * nx) throw DimensionError("latent_infer: grid does not match the model");
  if (iters < 0 || !(lr > 0)) throw ConfigError("latent_infer: iters must be >= 0 and lr > 0");
  const SweState up = bilinear_upsample(obs.y, obs.factor, ny, nx);
  LatentInferResult res;
  res.z0 = infer(model.encoder, Vector(up.flatten()));
  res.z = res.z0;
  const double count = 3.0 * static_cast<double>(obs.y.eta.size());

  auto misfit = [&](const Vector& x) { return axpy(decimate(SweState::unflatten(x, ny, nx), obs.factor), -1.0, obs.y); };
  AdamState adam;
  adam.lr = lr;
  MlpGrad scratch = MlpGrad::zeros_like(model.decoder);
  for (int it = 0; it <= iters; ++it) {
    Matrix zrow = res.z.transpose();
    auto fwd = forward(model.decoder, zrow);
    const Vector x = fwd.output.row(0).transpose();
    const SweState r = misfit(x);
    const double loss = dot(r, r) / count;
    res.history.push_back(loss);
    if (it == iters) {
      res.residual = loss;
      break;
    }
    const Vector dx = (2.0 / count) * decimate_adjoint(r, obs.factor, ny, nx).flatten();
    scratch.set_zero();
    const Matrix dz = backward(fwd.tape, dx.transpose(), scratch);
    const Vector gz = dz.row(0).transpose();
    adam_step(adam, ParamSpans{{res.z.data(), static_cast<std::size_t>(res.z.size())}},
              ConstParamSpans{{gz.data(), static_cast<std::size_t>(gz.size())}});
    if (!res.z.allFinite()) throw NumericalError("latent_infer: non-finite latent iterate");
  }
  return res;
}

void VarProblem::validate() const {
  cfg.validate();
  const Eigen::Index n = cfg.state_size();
  if (background.size() != n || norm.dim() != n) throw DimensionError("VarProblem: background/normalization size mismatch");
  if (!(sigma_b > 0) || lambda < 0 || !(noise_var > 0)) throw ConfigError("VarProblem: sigma_b, noise variance must be > 0, lambda >= 0");
  check_factor(cfg.ny, cfg.nx, factor);
  for (const auto& o : obs) {
    if (o.step < 0) throw ConfigError("VarProblem: observation before the window start");
    if (o.y.ny() * factor != cfg.ny || o.y.nx() * factor != cfg.nx)
      throw DimensionError("VarProblem: observation grid mismatch");
  }
}

Vector apply_background_precision(const VarProblem& p, const Vector& v) {
  const int ny = p.cfg.ny, nx = p.cfg.nx;
  const Eigen::Index n = static_cast<Eigen::Index>(ny) * nx;
  if (v.size() != 3 * n) throw DimensionError("apply_background_precision: size mismatch");
  Vector out = v;
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<const Matrix> f(v.data() + c * n, ny, nx);
    Eigen::Map<Matrix> o(out.data() + c * n, ny, nx);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        double lap = 0.0;
        if (i > 0) lap += f(j, i) - f(j, i - 1);
        if (i + 1 < nx) lap += f(j, i) - f(j, i + 1);
        if (j > 0) lap += f(j, i) - f(j - 1, i);
        if (j + 1 < ny) lap += f(j, i) - f(j + 1, i);
        o(j, i) += p.lambda * lap;
      }
  }
  return out / (p.sigma_b * p.sigma_b);
}

double fourdvar_cost_grad(const VarProblem& p, const Vector& x0, Vector& grad) {
  p.validate();
  if (x0.size() != p.background.size()) throw DimensionError("fourdvar: candidate size mismatch");
  const int ny = p.cfg.ny, nx = p.cfg.nx;
  const Vector dxb = x0 - p.background;
  const Vector prec = apply_background_precision(p, dxb);
  double cost = 0.5 * dxb.dot(prec);
  grad = prec;
  if (p.obs.empty()) return cost;

  int last = 0;
  for (const auto& o : p.obs) last = std::max(last, o.step);
  std::vector<SweState> traj;
  traj.reserve(static_cast<std::size_t>(last) + 1);
  traj.push_back(destandardize(p.norm, SweState::unflatten(x0, ny, nx, p.t0)));
  for (int k = 0; k < last; ++k) traj.push_back(step_tvdrk3(traj.back(), p.cfg));

  // Misfit forcing in physical coordinates: d/dx of 1/2|P((x - mu)/s) - y|^2 / sigma^2.
  std::vector<SweState> forcing(static_cast<std::size_t>(last) + 1);
  std::vector<bool> has(static_cast<std::size_t>(last) + 1, false);
  const Vector inv_std = p.norm.state_std.cwiseInverse();
  for (const auto& o : p.obs) {
    const SweState xs = standardize(p.norm, traj[static_cast<std::size_t>(o.step)]);
    const SweState r = axpy(decimate(xs, p.factor), -1.0, o.y);
    cost += 0.5 * dot(r, r) / p.noise_var;
    const Vector f = decimate_adjoint(r, p.factor, ny, nx).flatten().cwiseProduct(inv_std) / p.noise_var;
    auto& slot = forcing[static_cast<std::size_t>(o.step)];
    const SweState fs = SweState::unflatten(f, ny, nx);
    slot = has[static_cast<std::size_t>(o.step)] ? axpy(slot, 1.0, fs) : fs;
    has[static_cast<std::size_t>(o.step)] = true;
  }
  SweState lam = SweState::zeros(p.cfg);
  for (int k = last; k >= 0; --k) {
    if (has[static_cast<std::size_t>(k)]) lam = axpy(lam, 1.0, forcing[static_cast<std::size_t>(k)]);
    if (k > 0) lam = step_adj(traj[static_cast<std::size_t>(k - 1)], lam, p.cfg);
  }
  grad += lam.flatten().cwiseProduct(p.norm.state_std);
  return cost;
}

double fourdvar_cost(const VarProblem& p, const Vector& x0) {
  Vector g;
  return fourdvar_cost_grad(p, x0, g);
}

Vector fourdvar_gradient(const VarProblem& p, const Vector& x0) {
  Vector g;
  fourdvar_cost_grad(p, x0, g);
  return g;
}

VarResult fourdvar_solve(const VarProblem& p, int max_iters, LbfgsOptions opts) {
  p.validate();
  opts.max_iters = max_iters;
  VarResult res;
  res.opt = lbfgs_minimize([&](const Vector& x, Vector& g) { return fourdvar_cost_grad(p, x, g); }, p.background, opts);
  res.analysis = res.opt.x;
  return res;
}

std::vector<SweState> fourdvar_forecast(const VarProblem& p, const Vector& analysis, const std::vector<int>& steps) {
  if (!std::is_sorted(steps.begin(), steps.end()) || (!steps.empty() && steps.front() < 0))
    throw ConfigError("fourdvar_forecast: steps must be sorted and non-negative");
  std::vector<SweState> out;
  SweState s = destandardize(p.norm, SweState::unflatten(analysis, p.cfg.ny, p.cfg.nx, p.t0));
  int k = 0;
  for (int target : steps) {
    for (; k < target; ++k) s = step_tvdrk3(s, p.cfg);
    out.push_back(s);
  }
  return out;
}

namespace {
constexpr std::uint32_t kObsVersion = 1;
}

void save_observation(const std::filesystem::path& path, const Observation& obs) {
  io::Writer w(path);
  w.magic("LTWO");
  w.u32(kObsVersion);
  w.u32(static_cast<std::uint32_t>(obs.factor));
  w.f64(obs.noise_var);
  w.f64(obs.y.t);
  w.u32(static_cast<std::uint32_t>(obs.y.ny()));
  w.u32(static_cast<std::uint32_t>(obs.y.nx()));
  w.matrix(obs.y.eta);
  w.matrix(obs.y.u);
  w.matrix(obs.y.v);
  w.close();
}

Observation load_observation(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("LTWO");
  if (r.u32() != kObsVersion) throw IoError("LTWO: unsupported version");
  Observation obs;
  obs.factor = static_cast<int>(r.u32());
  obs.noise_var = r.f64();
  obs.y.t = r.f64();
  const auto ny = r.u32();
  const auto nx = r.u32();
  if (ny == 0 || nx == 0 || ny > 100000 || nx > 100000) throw IoError("LTWO: implausible grid size");
  obs.y.eta = r.matrix(ny, nx);
  obs.y.u = r.matrix(ny, nx);
  obs.y.v = r.matrix(ny, nx);
  return obs;
}

}  // namespace latwin
