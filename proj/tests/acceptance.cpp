// Runs every acceptance check and prints one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "latwin/assimilate.hpp"
#include "latwin/autodiff.hpp"
#include "latwin/experiments.hpp"
#include "latwin/numkit.hpp"
#include "latwin/swe.hpp"

using namespace latwin;
namespace ex = latwin::experiments;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix random_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.standard_normal();
  return m;
}

SweState random_state(const SweConfig& c, RngStream& rng) {
  SweState s = SweState::zeros(c);
  for (Matrix* m : {&s.eta, &s.u, &s.v})
    for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = rng.standard_normal();
  return s;
}

// ---------------------------------------------------------------- shared runs

struct OdeRuns {
  std::vector<OdeSystem> systems;
  std::vector<ex::OdeTwinReport> reports;
  double seconds = 0.0;
};

OdeRuns& ode_runs() {
  static OdeRuns runs = [] {
    OdeRuns r;
    const auto t0 = std::chrono::steady_clock::now();
    for (SystemId id : {SystemId::harmonic, SystemId::sir, SystemId::lotka_volterra, SystemId::lorenz63}) {
      r.systems.push_back(OdeSystem::make(id));
      r.reports.push_back(ex::run_ode_twin(r.systems.back(), {}));
      std::fprintf(stderr, "  trained %s twin: direct %.3g recursive %.3g (%.0f s)\n", r.systems.back().name.c_str(),
                   r.reports.back().direct_mse, r.reports.back().recursive_mse, r.reports.back().seconds);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

const ex::StructuredReport& structured_run() {
  static const ex::StructuredReport rep = ex::run_structured_harmonic({});
  return rep;
}

const ex::SweOptions kSwe{};

const ex::SweTwinReport& swe_run() {
  static const ex::SweTwinReport rep = [] {
    auto r = ex::run_swe_twin(kSwe);
    std::fprintf(stderr, "  trained SWE twin (%.0f s)\n", r.seconds);
    return r;
  }();
  return rep;
}

// The simulations behind the SWE pair dataset.
const std::vector<FieldTrajectory>& swe_pool() {
  static const std::vector<FieldTrajectory> pool = [] {
    std::vector<FieldTrajectory> out;
    const SweConfig cfg = ex::swe_config(kSwe);
    for (std::size_t k = 0; k < kSwe.trajectories; ++k) out.push_back(simulate(cfg, kSwe.trajectory_seed + k));
    return out;
  }();
  return pool;
}

// ---------------------------------------------------------------- criteria

Outcome structured_harmonic() {
  const auto& r = structured_run();
  return {r.generator_error <= 1e-3 && r.max_trajectory_error <= 1e-3 && r.seconds < 120.0,
          fmt("|W-M|_F=%.3g traj_err=%.3g time=%.1fs", r.generator_error, r.max_trajectory_error, r.seconds)};
}

Outcome ode_mse_ranges() {
  const auto& r = ode_runs();
  const double h = r.reports[0].direct_mse, s = r.reports[1].direct_mse, l = r.reports[2].direct_mse,
               z = r.reports[3].direct_mse;
  const bool ok = h >= 5e-5 && h <= 5e-3 && s <= 1e-6 && l >= 0.7 && l <= 70.0 && z >= 5.0 && z <= 540.0 &&
                  r.seconds < 1800.0;
  return {ok, fmt("harmonic=%.3g sir=%.3g lv=%.3g lorenz=%.3g time=%.0fs", h, s, l, z, r.seconds)};
}

Outcome direct_vs_recursive() {
  const auto& r = ode_runs();
  const auto& h = r.reports[0];
  const auto& s = r.reports[1];
  return {h.recursive_mse >= h.direct_mse && s.recursive_mse >= s.direct_mse,
          fmt("harmonic %.3g>=%.3g sir %.3g>=%.3g", h.recursive_mse, h.direct_mse, s.recursive_mse, s.direct_mse)};
}

Outcome horizon_uniformity() {
  const auto& r = ode_runs();
  LstmTrainConfig cfg;
  cfg.hidden = 10;
  const auto c = ex::run_lstm_horizon(r.systems[0], r.reports[0].train.model, cfg);
  return {c.twin_slope <= c.lstm_slope && c.lstm_slope > 0.0,
          fmt("twin_slope=%.3g lstm_slope=%.3g lstm_params=%zu", c.twin_slope, c.lstm_slope, c.parameters)};
}

Outcome budget_bound() {
  const auto& r = ode_runs();
  bool ok = true;
  std::string d;
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    const ErrorBudget b = ex::ode_error_budget(r.systems[i], r.reports[i]);
    ok = ok && b.holds() && !b.end_to_end.empty();
    d += fmt("%s %.3g<=%.3g ", r.systems[i].name.c_str(), b.max_end_to_end, b.bound);
  }
  return {ok, d};
}

Outcome structured_perturbation() {
  const auto& r = structured_run();
  return {r.max_map_error <= r.perturbation_bound,
          fmt("max_err=%.3g bound=%.3g", r.max_map_error, r.perturbation_bound)};
}

Outcome pod_equivalence() {
  const auto r = ex::run_pod_equivalence();
  return {r.max_difference <= 1e-8 && r.steps.size() == 20,
          fmt("max_diff=%.3g energy=%.6f", r.max_difference, r.energy)};
}

double mlp_fd_error(std::vector<int> widths, std::vector<Activation> acts, std::uint64_t seed) {
  RngStream rng(seed);
  Mlp net = Mlp::xavier(widths, acts, rng);
  for (auto& layer : net.mutable_layers())
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias(k) = 0.3 * rng.standard_normal();
  const Matrix X = random_matrix(rng, 4, widths.front());
  const Matrix C = random_matrix(rng, 4, widths.back());
  auto fr = forward(net, X);
  MlpGrad g = MlpGrad::zeros_like(net);
  backward(fr.tape, C, g);
  const auto f = [&] { return infer(net, X).cwiseProduct(C).sum(); };
  ParamSpans ps = net.parameters();
  const ConstParamSpans gs = g.spans();
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t b = 0; b < ps.size(); ++b)
    for (std::size_t i = 0; i < ps[b].size(); ++i) {
      const double keep = ps[b][i];
      ps[b][i] = keep + h;
      const double up = f();
      ps[b][i] = keep - h;
      const double down = f();
      ps[b][i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - gs[b][i]) / std::max({std::abs(fd), std::abs(gs[b][i]), 1e-3}));
    }
  return worst;
}

Outcome numerical_hygiene() {
  const double ad = std::max({mlp_fd_error({3, 6, 5, 2}, {Activation::tanh, Activation::tanh, Activation::identity}, 1),
                              mlp_fd_error({4, 8, 3}, {Activation::relu, Activation::identity}, 2),
                              mlp_fd_error({4, 8, 6, 3}, {Activation::softmax, Activation::softmax, Activation::identity}, 3)});

  RngStream rng(4);
  double fr = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix A = random_matrix(rng, 4, 4), E = random_matrix(rng, 4, 4);
    const double h = 1e-6;
    const Matrix fd = (expm(Matrix(A + h * E)) - expm(Matrix(A - h * E))) / (2 * h);
    const Matrix L = expm_frechet(A, E);
    fr = std::max(fr, (L - fd).norm() / L.norm());
  }

  SweConfig c;
  c.nx = c.ny = 16;
  VarProblem p;
  p.cfg = c;
  p.norm = NormStats::identity(c.state_size());
  p.norm.state_std.head(c.state_size() / 3).setConstant(0.2);
  p.norm.state_std.tail(2 * c.state_size() / 3).setConstant(0.05);
  p.background = Vector::Zero(c.state_size());
  p.factor = 2;
  const FieldTrajectory tr = simulate_from(c, gaussian_init(c, 5), 12);
  for (int k : {0, 6, 12}) p.obs.push_back({k, decimate(standardize(p.norm, tr.states[static_cast<std::size_t>(k)]), 2)});
  Vector x0(c.state_size());
  for (Eigen::Index k = 0; k < x0.size(); ++k) x0(k) = 0.3 * rng.standard_normal();
  Vector g;
  fourdvar_cost_grad(p, x0, g);
  double var = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Vector dir(x0.size());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = rng.standard_normal();
    dir.normalize();
    const double h = 1e-4;
    const double fd = (fourdvar_cost(p, Vector(x0 + h * dir)) - fourdvar_cost(p, Vector(x0 - h * dir))) / (2 * h);
    var = std::max(var, std::abs(fd - g.dot(dir)) / std::max(std::abs(fd), 1e-8));
  }

  const FieldTrajectory base = simulate(c, 9);
  const SweState v = random_state(c, rng), w = random_state(c, rng);
  SweState a = v, b = w;
  for (int k = 0; k < 100; ++k) a = step_tl(base.states[static_cast<std::size_t>(k)], a, c);
  for (int k = 99; k >= 0; --k) b = step_adj(base.states[static_cast<std::size_t>(k)], b, c);
  const double lhs = dot(a, w), rhs = dot(v, b);
  const double adj = std::abs(lhs - rhs) / std::abs(lhs);

  return {ad < 1e-5 && fr < 1e-5 && var < 1e-5 && adj < 1e-10,
          fmt("autodiff=%.2g frechet=%.2g 4dvar=%.2g adjoint100=%.2g", ad, fr, var, adj)};
}

Outcome swe_physics() {
  SweConfig c;
  const FieldTrajectory tr = simulate(c, 42);
  const double m0 = swe_mass(tr.states.front(), c);
  double drift = 0.0;
  for (const auto& s : tr.states) drift = std::max(drift, std::abs(swe_mass(s, c) - m0) / std::abs(m0));
  const FieldTrajectory again = simulate(c, 42);
  const bool same = again.states.back().eta == tr.states.back().eta && again.states.back().u == tr.states.back().u &&
                    again.states.back().v == tr.states.back().v;

  // Small-amplitude pulse without rotation; the crest is tracked along the centre row.
  SweConfig w;
  w.nx = w.ny = 128;
  w.f0 = w.beta = 0.0;
  w.dt = 25.0;
  w.sigma_init = 3e4;
  SweState s = gaussian_bump(w, 0.0, 0.0);
  s.eta *= 0.01;
  const FieldTrajectory wt = simulate_from(w, s, 360);
  const auto crest = [&](const SweState& st) {
    const int j = w.ny / 2;
    int best = w.nx / 2 + 1;
    for (int i = w.nx / 2 + 1; i < w.nx - 1; ++i)
      if (st.eta(j, i) > st.eta(j, best)) best = i;
    const double l = st.eta(j, best - 1), m = st.eta(j, best), r = st.eta(j, best + 1);
    return w.x_center(best) + 0.5 * (l - r) / (l - 2 * m + r) * w.dx();
  };
  const double speed = (crest(wt.states[360]) - crest(wt.states[120])) / (wt.states[360].t - wt.states[120].t);
  const double rel = std::abs(speed - w.wave_speed()) / w.wave_speed();
  return {drift <= 1e-6 && rel <= 0.05 && same && tr.size() == 601,
          fmt("mass_drift=%.2g speed=%.2f m/s (sqrt(gH)=%.2f) deterministic=%s", drift, speed, w.wave_speed(),
              same ? "yes" : "no")};
}

Outcome swe_twin() {
  const auto& r = swe_run();
  return {r.rel_reconstruction < 0.10 && r.rel_prediction < 0.15 && r.seconds < 1800.0,
          fmt("rel_rec=%.3g rel_pred=%.3g time=%.0fs", r.rel_reconstruction, r.rel_prediction, r.seconds)};
}

Outcome observation_inference() {
  const auto r = ex::run_inference(swe_run().train.model, swe_pool().front(), kSwe);
  return {r.twin_obs < r.bilinear_obs && r.twin_forecast < r.bilinear_forecast,
          fmt("t1: twin=%.3g bilinear=%.3g  t2: twin=%.3g bilinear=%.3g", r.twin_obs, r.bilinear_obs,
              r.twin_forecast, r.bilinear_forecast)};
}

Outcome twin_vs_fourdvar() {
  const auto r = ex::run_fourdvar(swe_run().train.model, swe_pool().front(), kSwe);
  return {r.twin_forecast < r.analysis_forecast && std::isfinite(r.analysis_obs) && r.analysis_obs < r.background_obs,
          fmt("t2: twin=%.3g 4dvar=%.3g  t1: analysis=%.3g background=%.3g", r.twin_forecast, r.analysis_forecast,
              r.analysis_obs, r.background_obs)};
}

Outcome twin_vs_deeponet() {
  DeepOnetTrainConfig tc;
  tc.epochs = 1000;
  tc.batch_size = 4;
  tc.queries = 4096;
  const std::vector<int> steps{100, 200, 300, 400, 500, 600};
  const auto r = ex::run_operator_comparison(swe_run().train.model, swe_pool(), swe_pool(), steps, tc);
  bool ok = true;
  std::string d;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    ok = ok && r.twin_error[i] < r.deeponet_error[i];
    d += fmt("%d:%.3g/%.3g ", steps[i], r.twin_error[i], r.deeponet_error[i]);
  }
  return {ok, d + fmt("(twin/deeponet, %.0fs)", r.deeponet_seconds)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "latwin_acceptance_repro";
  fs::remove_all(root);
  const std::vector<std::string> commands{
      "train --system harmonic --epochs 20 --pairs 4096 --restarts 2 --deterministic",
      "train --system harmonic --mode structured --epochs 10 --pairs 4096 --deterministic",
      "simulate --system swe --grid 32 --deterministic",
  };
  bool ok = true;
  std::string d;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::vector<fs::path> runs;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = root / ("c" + std::to_string(c) + "r" + std::to_string(rep));
      fs::create_directories(dir);
      const std::string cmd = "LT_RUN_DIR='" + dir.string() + "' '" LATWIN_CLI "' " + commands[c] + " > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        ok = false;
        d += fmt("[%s] failed ", commands[c].c_str());
      }
      runs.push_back(dir);
    }
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
      const std::string name = e.path().filename().string();
      if (name != "metrics.json" && name != "metrics.csv") continue;
      const fs::path other = runs[1] / fs::relative(e.path(), runs[0]);
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
        ok = false;
        d += "differs:" + fs::relative(e.path(), runs[0]).string() + " ";
      }
      ++compared;
    }
    if (compared == 0) ok = false;
    d += fmt("%zu files ", compared);
  }
  fs::remove_all(root);
  return {ok, d + "byte-compared"};
}

}  // namespace

// Optional arguments select criteria by number, e.g. `latwin_acceptance 5 7`.
int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {"structured harmonic twin", structured_harmonic},
      {"ODE twin MSE ranges", ode_mse_ranges},
      {"direct vs recursive ordering", direct_vs_recursive},
      {"horizon uniformity vs LSTM", horizon_uniformity},
      {"error-budget bound", budget_bound},
      {"structured perturbation bound", structured_perturbation},
      {"POD / Galerkin equivalence", pod_equivalence},
      {"numerical hygiene (FD and adjoint checks)", numerical_hygiene},
      {"SWE solver physics", swe_physics},
      {"scaled SWE twin", swe_twin},
      {"observation inference vs bilinear", observation_inference},
      {"twin vs 4D-Var forecast", twin_vs_fourdvar},
      {"twin vs DeepONet", twin_vs_deeponet},
      {"reproducibility", reproducibility},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion %s\n", argv[a]);
      return 2;
    }
    selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%2zu] %s  %s: %s  (%.1fs)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
