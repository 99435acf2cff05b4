#include "latwin/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "latwin/errors.hpp"

namespace latwin::experiments {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

OdeTwinReport run_ode_twin(const OdeSystem& sys, const OdeTwinOptions& opt) {
  if (opt.grid < 2) throw ConfigError("run_ode_twin: grid must have at least two intervals");
  const auto start = std::chrono::steady_clock::now();
  OdeTwinReport rep;
  rep.system = sys.name;
  const OdeSolution sol = solve(sys, sys.x0, sys.t_start, sys.t_end);
  rep.dataset = normalize(sample_pairs_ode(sol, opt.pairs, opt.gap_cap, opt.seed));

  TrainConfig tc;
  tc.epochs = opt.epochs;
  tc.batch_size = opt.batch_size;
  tc.schedule = LrSchedule::constant(opt.lr);
  tc.seed = opt.seed;
  tc.restarts = opt.restarts;
  tc.eval_every = std::max(1, opt.epochs / 20);
  rep.train = train_twin(rep.dataset, TwinArchitecture::ode_default(sys.dim), tc);
  rep.parameters = rep.train.model.parameter_count();

  // One anchor on the evaluation grid, drawn from a stream of its own.
  RngStream anchor_rng = RngStream(opt.seed).fork(17);
  const std::size_t k1 = anchor_rng.below(opt.grid + 1);
  const double h = (sys.t_end - sys.t_start) / static_cast<double>(opt.grid);
  rep.anchor_time = sys.t_start + static_cast<double>(k1) * h;
  const auto ref = [&](double t) { return sol(std::clamp(t, sys.t_start, sys.t_end)); };
  rep.forward = horizon_error_profile(rep.train.model, ref, rep.anchor_time, h, opt.grid - k1);
  rep.backward = horizon_error_profile(rep.train.model, ref, rep.anchor_time, -h, k1);
  double d = 0.0, r = 0.0;
  for (const auto& p : rep.forward) {
    d += p.direct_sq;
    r += p.rollout_sq;
  }
  for (std::size_t i = 1; i < rep.backward.size(); ++i) {
    d += rep.backward[i].direct_sq;
    r += rep.backward[i].rollout_sq;
  }
  rep.direct_mse = d / static_cast<double>(opt.grid + 1);
  rep.recursive_mse = r / static_cast<double>(opt.grid + 1);
  rep.seconds = seconds_since(start);
  return rep;
}

ErrorBudget ode_error_budget(const OdeSystem& sys, const OdeTwinReport& report, std::uint64_t seed) {
  const TwinModel& model = report.train.model;
  const NormStats& ns = model.norm;
  const FlowFn phys = make_flow(sys);
  const FlowFn flow = [&](const Vector& z1, double s1, double s2) {
    return ns.normalize_state(phys(ns.denormalize_state(z1), ns.denormalize_time(s1), ns.denormalize_time(s2)));
  };
  const PairDataset& ds = report.dataset;
  std::vector<FlowSample> samples;
  const std::size_t count = std::min<std::size_t>(ds.test.size(), 64);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<Eigen::Index>(ds.test[i]);
    // Forward in time only: reversed Lorenz/SIR flows blow up over long gaps.
    if (ds.t1(j) < ds.t2(j)) samples.push_back({ds.x1.row(j).transpose(), ds.t1(j), ds.t2(j)});
    else if (ds.t2(j) < ds.t1(j)) samples.push_back({ds.x2.row(j).transpose(), ds.t2(j), ds.t1(j)});
  }
  RngStream rng(seed);
  const double lg = estimate_flow_lipschitz(flow, samples, rng);
  const double horizon = (sys.t_end - sys.t_start) / ns.time_std;
  return diagnose_error_budget(model, ds, lg, horizon, 256, seed);
}

StructuredReport run_structured_harmonic(const StructuredOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  const OdeSystem sys = OdeSystem::make(SystemId::harmonic);
  const OdeSolution sol = solve(sys, sys.x0, sys.t_start, sys.t_end);
  const PairDataset ds = sample_pairs_ode(sol, opt.pairs, std::nullopt, opt.seed);

  StructuredTrainConfig c;
  c.epochs = opt.epochs;
  c.schedule = LrSchedule::step_halving(opt.lr, opt.halving_period);
  c.seed = opt.seed;
  c.curriculum_start_gap = opt.curriculum_start_gap;
  c.curriculum_epochs = opt.curriculum_epochs;
  StructuredTrainResult tr = train_structured(ds, 2, std::nullopt, c);

  StructuredReport rep;
  const double w = sys.param("omega0");
  rep.M = Matrix{{0.0, 1.0}, {-w * w, 0.0}};
  rep.W = tr.map.generator;
  rep.generator_error = (rep.W - rep.M).norm();
  rep.loss_history = std::move(tr.loss_history);

  const std::vector<double> grid = linspace(sys.t_start, sys.t_end, 1001);
  double x_sup = 0.0;
  for (double t : grid) {
    const Vector truth = sol(t);
    x_sup = std::max(x_sup, truth.norm());
    const Vector pred = structured_evaluate(tr.map, sys.x0, sys.t_start, t);
    rep.max_trajectory_error = std::max(rep.max_trajectory_error, (pred - truth).norm());
  }
  const std::vector<double> hs = linspace(-opt.horizon, opt.horizon, 401);
  for (double h : hs) {
    const Matrix dW = expm(Matrix(h * rep.W)) - expm(Matrix(h * rep.M));
    for (std::size_t k = 0; k < grid.size(); k += 50) {
      rep.max_map_error = std::max(rep.max_map_error, (dW * sol(grid[k])).norm());
    }
  }
  rep.perturbation_bound = perturbation_bound(rep.M, rep.W, opt.horizon, x_sup);
  rep.seconds = seconds_since(start);
  return rep;
}

PodReport run_pod_equivalence(int n, int r, int samples, std::uint64_t seed) {
  if (n < 2 || r < 1 || r > n || samples < 1) throw ConfigError("run_pod_equivalence: invalid sizes");
  RngStream rng(seed);
  Matrix A(n, n), B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      A(i, j) = rng.standard_normal();
      B(i, j) = rng.standard_normal();
    }
  // Skew part plus a negative definite part keeps every eigenvalue in the left half-plane.
  const Matrix M = 0.5 * (A - A.transpose()) - (B * B.transpose()) / static_cast<double>(n) -
                   0.1 * Matrix::Identity(n, n);
  Vector x0(n);
  for (int i = 0; i < n; ++i) x0(i) = rng.standard_normal();

  IntegratorOptions io;
  io.atol = 1e-14;
  io.rtol = 1e-13;
  const RhsFn full = [&](double, const Vector& x) { return Vector(M * x); };
  const OdeSolution sol = integrate_dense(full, x0, 0.0, 5.0, io);
  const std::vector<double> ts = linspace(0.0, 5.0, 101);
  Matrix snaps(n, static_cast<Eigen::Index>(ts.size()));
  for (std::size_t k = 0; k < ts.size(); ++k) snaps.col(static_cast<Eigen::Index>(k)) = sol(ts[k]);

  const Matrix U = pod_basis(snaps, r);
  const Matrix G = galerkin_generator(M, U);
  const StructuredMap map = StructuredMap::fixed(G, U);
  const RhsFn rom = [&](double, const Vector& z) { return Vector(G * z); };

  PodReport rep;
  rep.energy = pod_energy(snaps, r);
  for (int s = 0; s < samples; ++s) {
    const double h = rng.uniform(0.0, 3.0);
    const Vector x = snaps.col(static_cast<Eigen::Index>(rng.below(ts.size())));
    const Vector lifted = structured_evaluate(map, x, 0.0, h);
    const Vector z0 = U.transpose() * x;
    const Vector galerkin = U * integrate_dense(rom, z0, 0.0, h, io).final_state();
    rep.steps.push_back(h);
    rep.max_difference = std::max(rep.max_difference, (lifted - galerkin).norm());
  }
  return rep;
}

HorizonComparison run_lstm_horizon(const OdeSystem& sys, const TwinModel& twin, const LstmTrainConfig& cfg,
                                   std::size_t samples) {
  if (samples <= static_cast<std::size_t>(cfg.window) + 2) throw ConfigError("run_lstm_horizon: too few samples");
  const OdeSolution sol = solve(sys, sys.x0, sys.t_start, sys.t_end);
  const std::vector<double> times = linspace(sys.t_start, sys.t_end, samples);
  const Trajectory traj = sample(sol, times);
  const LstmTrainResult lt = lstm_train(traj, cfg);

  HorizonComparison rep;
  rep.parameters = lt.model.parameter_count();
  const auto w = static_cast<std::size_t>(cfg.window);
  const std::vector<Vector> seeds(traj.states.begin(), traj.states.begin() + static_cast<std::ptrdiff_t>(w));
  const std::vector<Vector> roll = lstm_rollout(lt.model, seeds, cfg.window, samples - w);
  std::vector<double> logs;
  for (std::size_t k = w; k < samples; ++k) {
    const double err = (roll[k - w] - traj.states[k]).norm();
    rep.gaps.push_back(times[k] - times[w - 1]);
    rep.lstm_error.push_back(err);
    logs.push_back(std::log(std::max(err, 1e-300)));
  }
  rep.lstm_slope = least_squares_slope(rep.gaps, logs);

  const double h = times[1] - times[0];
  const auto ref = [&](double t) { return sol(std::clamp(t, sys.t_start, sys.t_end)); };
  rep.twin = horizon_error_profile(twin, ref, times[w - 1], h, samples - w);
  rep.twin_slope = log_error_slope(rep.twin, false);
  return rep;
}

SweConfig swe_config(const SweOptions& opt) {
  SweConfig cfg;
  cfg.nx = opt.grid;
  cfg.ny = opt.grid;
  cfg.validate();
  return cfg;
}

double relative_field_error(const Vector& estimate, const Vector& truth) { return relative_error(estimate, truth); }

SweTwinReport run_swe_twin(const SweOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  const SweConfig cfg = swe_config(opt);
  SweTwinReport rep;
  const PairDataset raw = sample_pairs_generated(
      opt.trajectories, static_cast<std::size_t>(cfg.steps) + 1, opt.pairs, opt.seed,
      [&](std::size_t k) { return simulate(cfg, opt.trajectory_seed + k).series(); });
  rep.dataset = normalize(raw, std::nullopt, 3);

  TrainConfig tc;
  tc.epochs = opt.epochs;
  tc.batch_size = opt.batch_size;
  tc.schedule = LrSchedule::step_halving(opt.lr, opt.halving_period);
  tc.seed = opt.seed;
  tc.eval_every = std::max(1, opt.epochs / 10);
  rep.train = train_twin(rep.dataset, TwinArchitecture::field_default(opt.encoder_hidden, opt.latent), tc);

  const PairDataset& ds = rep.dataset;
  const TwinModel& m = rep.train.model;
  const auto B = static_cast<Eigen::Index>(ds.test.size());
  if (B == 0) throw ConfigError("run_swe_twin: empty test split");
  Matrix X1(B, ds.n_x), X2(B, ds.n_x);
  Vector tau1(B), tau2(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto j = static_cast<Eigen::Index>(ds.test[static_cast<std::size_t>(i)]);
    X1.row(i) = ds.x1.row(j);
    X2.row(i) = ds.x2.row(j);
    tau1(i) = ds.t1(j);
    tau2(i) = ds.t2(j);
  }
  const Matrix Z = encode(m, X1);
  const Matrix R = decode(m, Z);
  const Matrix P = decode(m, latent_step(m, Z, tau1, tau2));
  double rr = 0.0, rp = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    rr += relative_error(R.row(i).transpose(), X1.row(i).transpose());
    rp += relative_error(P.row(i).transpose(), X2.row(i).transpose());
  }
  rep.rel_reconstruction = rr / static_cast<double>(B);
  rep.rel_prediction = rp / static_cast<double>(B);
  rep.seconds = seconds_since(start);
  return rep;
}

namespace {

void check_steps(const FieldTrajectory& traj, const SweOptions& opt) {
  const auto n = static_cast<int>(traj.states.size());
  if (opt.obs_step < 0 || opt.forecast_step < opt.obs_step || opt.forecast_step >= n)
    throw ConfigError("observation and forecast steps must satisfy 0 <= obs <= forecast < trajectory length");
}

Observation make_observation(const TwinModel& twin, const FieldTrajectory& traj, const SweOptions& opt) {
  ObsOperator op;
  op.factor = opt.factor;
  op.noise_var = opt.noise_var;
  op.seed = RngStream(opt.seed).fork(31).seed();
  return observe(op, standardize(twin.norm, traj.states[static_cast<std::size_t>(opt.obs_step)]));
}

}  // namespace

InferenceReport run_inference(const TwinModel& twin, const FieldTrajectory& traj, const SweOptions& opt) {
  check_steps(traj, opt);
  const SweConfig& cfg = traj.cfg;
  const SweState& s1 = traj.states[static_cast<std::size_t>(opt.obs_step)];
  const SweState& s2 = traj.states[static_cast<std::size_t>(opt.forecast_step)];
  const Vector truth1 = standardize(twin.norm, s1).flatten();
  const Vector truth2 = standardize(twin.norm, s2).flatten();
  const Observation obs = make_observation(twin, traj, opt);

  InferenceReport rep;
  rep.infer = latent_infer(twin, obs, cfg.ny, cfg.nx, opt.infer_iters, opt.infer_lr);
  const Matrix z = rep.infer.z.transpose();
  rep.twin_obs = relative_error(decode(twin, z).row(0).transpose(), truth1);
  const Vector tau1 = Vector::Constant(1, twin.norm.normalize_time(s1.t));
  const Vector tau2 = Vector::Constant(1, twin.norm.normalize_time(s2.t));
  rep.twin_forecast = relative_error(decode(twin, latent_step(twin, z, tau1, tau2)).row(0).transpose(), truth2);
  const SweState& s0 = traj.states.front();
  const Vector tau0 = Vector::Constant(1, twin.norm.normalize_time(s0.t));
  rep.twin_initial = relative_error(decode(twin, latent_step(twin, z, tau1, tau0)).row(0).transpose(),
                                    standardize(twin.norm, s0).flatten());
  const Vector up = bilinear_upsample(obs.y, obs.factor, cfg.ny, cfg.nx).flatten();
  rep.bilinear_obs = relative_error(up, truth1);
  rep.bilinear_forecast = relative_error(up, truth2);
  return rep;
}

VarReport run_fourdvar(const TwinModel& twin, const FieldTrajectory& traj, const SweOptions& opt) {
  check_steps(traj, opt);
  const SweState& s1 = traj.states[static_cast<std::size_t>(opt.obs_step)];
  const Vector truth1 = standardize(twin.norm, s1).flatten();
  const Observation obs = make_observation(twin, traj, opt);

  VarProblem p;
  p.cfg = traj.cfg;
  p.norm = twin.norm;
  p.background = Vector::Zero(truth1.size());
  p.factor = opt.factor;
  p.noise_var = opt.noise_var;
  p.t0 = s1.t;
  p.obs.push_back({0, obs.y});
  const VarResult vr = fourdvar_solve(p, opt.var_iters);

  VarReport rep;
  rep.opt = vr.opt;
  rep.background_obs = relative_error(p.background, truth1);
  rep.analysis_obs = relative_error(vr.analysis, truth1);
  for (int k = opt.obs_step; k < opt.forecast_step; k += 100) rep.steps.push_back(k);
  rep.steps.push_back(opt.forecast_step);
  std::vector<int> rel;
  for (int k : rep.steps) rel.push_back(k - opt.obs_step);
  const std::vector<SweState> fc = fourdvar_forecast(p, vr.analysis, rel);

  const InferenceReport inf = run_inference(twin, traj, opt);
  const Matrix z = inf.infer.z.transpose();
  const Vector tau1 = Vector::Constant(1, twin.norm.normalize_time(s1.t));
  for (std::size_t i = 0; i < rep.steps.size(); ++i) {
    const SweState& truth = traj.states[static_cast<std::size_t>(rep.steps[i])];
    const Vector ts = standardize(twin.norm, truth).flatten();
    rep.var_errors.push_back(relative_error(standardize(twin.norm, fc[i]).flatten(), ts));
    const Vector tau = Vector::Constant(1, twin.norm.normalize_time(truth.t));
    rep.twin_errors.push_back(relative_error(decode(twin, latent_step(twin, z, tau1, tau)).row(0).transpose(), ts));
  }
  rep.analysis_forecast = rep.var_errors.back();
  rep.twin_forecast = inf.twin_forecast;
  return rep;
}

OperatorComparison run_operator_comparison(const TwinModel& twin, const std::vector<FieldTrajectory>& train,
                                           const std::vector<FieldTrajectory>& test, const std::vector<int>& steps,
                                           const DeepOnetTrainConfig& tc, int stride) {
  if (train.empty() || test.empty() || steps.empty() || stride < 1)
    throw ConfigError("run_operator_comparison: empty input or invalid stride");
  const auto start = std::chrono::steady_clock::now();
  const SweConfig cfg = train.front().cfg;
  std::vector<OperatorSample> data;
  for (const auto& tr : train) {
    OperatorSample s;
    s.x0 = tr.states.front();
    for (std::size_t k = 0; k < tr.states.size(); k += static_cast<std::size_t>(stride)) s.snapshots.push_back(tr.states[k]);
    data.push_back(std::move(s));
  }
  DeepOnetTrainConfig dc = tc;
  dc.train_fraction = 1.0;
  const DeepOnetTrainResult dr = deeponet_train(data, cfg, dc, twin.norm);

  OperatorComparison rep;
  rep.deeponet_seconds = seconds_since(start);
  rep.steps = steps;
  for (int step : steps) {
    double et = 0.0, ed = 0.0;
    for (const auto& tr : test) {
      if (step < 0 || static_cast<std::size_t>(step) >= tr.states.size())
        throw ConfigError("run_operator_comparison: step outside the trajectory");
      const SweState& x0 = tr.states.front();
      const SweState& xs = tr.states[static_cast<std::size_t>(step)];
      const Vector truth = standardize(twin.norm, xs).flatten();
      const Vector lt = twin_evaluate(twin, x0.flatten(), x0.t, xs.t);
      et += relative_error(twin.norm.normalize_state(lt), truth);
      const SweState don = deeponet_field(dr.model, x0, xs.t, cfg);
      ed += relative_error(standardize(twin.norm, don).flatten(), truth);
    }
    rep.twin_error.push_back(et / static_cast<double>(test.size()));
    rep.deeponet_error.push_back(ed / static_cast<double>(test.size()));
  }
  return rep;
}

}  // namespace latwin::experiments
