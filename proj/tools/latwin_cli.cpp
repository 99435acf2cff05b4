// latwin command-line tool: simulate, dataset, train, eval, infer, 4dvar, compare.
//
// Every invocation writes into a fresh run directory under $LT_RUN_DIR
// (default ./runs): resolved config, metric files and artifacts. Metric files
// hold no timings so that reruns can be compared byte for byte; wall-clock
// numbers go to timing.json.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "latwin/errors.hpp"
#include "latwin/experiments.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace latwin;

namespace {

struct Settings {
  std::string system = "harmonic";
  std::uint64_t seed = 42;
  int epochs = -1;  // -1 selects the per-experiment default
  int grid = 32;
  int factor = 4;
  double gap_cap = 0.0;  // 0 means uncapped
  std::string mode = "mlp";
  std::size_t pairs = 0;  // 0 selects the per-experiment default
  int restarts = 4;
  std::size_t trajectories = 8;
  std::string profile;
  std::string model;
  std::string methods = "twin,lstm";
  int threads = 1;
  bool deterministic = false;
  std::string config;
};

const std::map<std::string, std::string Settings::*> kStringKeys{
    {"system", &Settings::system}, {"mode", &Settings::mode},       {"profile", &Settings::profile},
    {"model", &Settings::model},   {"methods", &Settings::methods}};

// Applies key=value lines. Unknown keys and malformed values are config errors.
void apply_config_file(Settings& s, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string v) {
      const auto a = v.find_first_not_of(" \t\r");
      const auto b = v.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (auto it = kStringKeys.find(key); it != kStringKeys.end()) {
        s.*(it->second) = val;
      } else if (key == "seed") {
        s.seed = std::stoull(val);
      } else if (key == "epochs") {
        s.epochs = std::stoi(val);
      } else if (key == "grid") {
        s.grid = std::stoi(val);
      } else if (key == "factor") {
        s.factor = std::stoi(val);
      } else if (key == "gap_cap" || key == "gap-cap") {
        s.gap_cap = std::stod(val);
      } else if (key == "pairs") {
        s.pairs = std::stoull(val);
      } else if (key == "restarts") {
        s.restarts = std::stoi(val);
      } else if (key == "trajectories") {
        s.trajectories = std::stoull(val);
      } else if (key == "threads") {
        s.threads = std::stoi(val);
      } else if (key == "deterministic") {
        s.deterministic = val == "1" || val == "true";
      } else {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
}

std::string resolved_config(const Settings& s, const std::string& command) {
  std::ostringstream o;
  o << "command=" << command << "\nsystem=" << s.system << "\nseed=" << s.seed << "\nepochs=" << s.epochs
    << "\ngrid=" << s.grid << "\nfactor=" << s.factor << "\ngap_cap=" << s.gap_cap << "\nmode=" << s.mode
    << "\npairs=" << s.pairs << "\nrestarts=" << s.restarts << "\ntrajectories=" << s.trajectories
    << "\nprofile=" << s.profile << "\nmodel=" << s.model << "\nmethods=" << s.methods
    << "\nthreads=" << s.threads << "\ndeterministic=" << (s.deterministic ? 1 : 0) << "\n";
  return o.str();
}

fs::path fresh_run_dir(const std::string& command, const Settings& s) {
  const char* env = std::getenv("LT_RUN_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create run root " + root.string() + ": " + ec.message());
  const std::string stem = command + "-" + s.system + "-s" + std::to_string(s.seed);
  for (int n = 0; n < 100000; ++n) {
    const fs::path dir = root / (stem + "-" + std::to_string(n));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  }
  throw IoError("no free run directory under " + root.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

bool is_swe(const Settings& s) { return s.system == "swe"; }

experiments::SweOptions swe_options(const Settings& s) {
  experiments::SweOptions o;
  o.grid = s.grid;
  o.factor = s.factor;
  o.seed = s.seed;
  o.trajectories = s.trajectories;
  if (s.epochs >= 0) o.epochs = s.epochs;
  if (s.pairs > 0) o.pairs = s.pairs;
  return o;
}

experiments::OdeTwinOptions ode_options(const Settings& s) {
  experiments::OdeTwinOptions o;
  o.seed = s.seed;
  o.restarts = s.restarts;
  if (s.epochs >= 0) o.epochs = s.epochs;
  if (s.pairs > 0) o.pairs = s.pairs;
  if (s.gap_cap > 0) o.gap_cap = s.gap_cap;
  return o;
}

json budget_json(const ErrorBudget& b) {
  return {{"eps_ae", b.eps_ae},       {"eps_map", b.eps_map}, {"decoder_lipschitz", b.decoder_lipschitz},
          {"flow_lipschitz", b.flow_lipschitz}, {"horizon", b.horizon}, {"bound", b.bound},
          {"max_end_to_end", b.max_end_to_end}, {"holds", b.holds()}};
}

TwinModel require_model(const Settings& s) {
  if (s.model.empty()) throw ConfigError("--model is required for this command");
  return load_twin(s.model);
}

// The twin's training trajectories are reproduced from the same seeds.
FieldTrajectory swe_trajectory(const experiments::SweOptions& o, std::size_t k) {
  return simulate(experiments::swe_config(o), o.trajectory_seed + k);
}

json cmd_simulate(const Settings& s, const fs::path& dir) {
  if (is_swe(s)) {
    SweConfig cfg;
    cfg.nx = cfg.ny = s.grid;
    cfg.validate();
    const FieldTrajectory tr = simulate(cfg, s.seed);
    save_field_trajectory(dir / "trajectory.ltwf", tr.states);
    const double m0 = swe_mass(tr.states.front(), cfg), m1 = swe_mass(tr.states.back(), cfg);
    const double e0 = swe_energy(tr.states.front(), cfg);
    double emax = e0;
    for (const auto& st : tr.states) emax = std::max(emax, swe_energy(st, cfg));
    return {{"snapshots", tr.states.size()}, {"final_time", tr.states.back().t},
            {"mass_rel_drift", std::abs(m1 - m0) / std::abs(m0)}, {"energy_max_ratio", emax / e0}};
  }
  const OdeSystem sys = OdeSystem::by_name(s.system);
  const OdeSolution sol = solve(sys, sys.x0, sys.t_start, sys.t_end);
  const std::size_t n = s.grid > 1 ? static_cast<std::size_t>(s.grid) * 10 + 1 : 201;
  const Trajectory tr = sample(sol, linspace(sys.t_start, sys.t_end, n));
  tr.write_csv(dir / "trajectory.csv");
  return {{"samples", tr.size()}, {"accepted_steps", sol.steps().size()}, {"rejected_steps", sol.rejected_steps()}};
}

json cmd_dataset(const Settings& s, const fs::path& dir) {
  PairDataset ds;
  if (is_swe(s)) {
    const auto o = swe_options(s);
    const SweConfig cfg = experiments::swe_config(o);
    ds = sample_pairs_generated(o.trajectories, static_cast<std::size_t>(cfg.steps) + 1, o.pairs, s.seed,
                                [&](std::size_t k) { return swe_trajectory(o, k).series(); });
  } else {
    const auto o = ode_options(s);
    ds = sample_pairs_ode(OdeSystem::by_name(s.system), o.pairs, o.gap_cap, s.seed);
  }
  save(ds, dir / "pairs.ltw1");
  std::ostringstream hash;
  hash << std::hex << dataset_hash(ds);
  return {{"pairs", ds.size()}, {"train", ds.train.size()}, {"test", ds.test.size()}, {"n_x", ds.n_x},
          {"hash", hash.str()}};
}

json cmd_train(const Settings& s, const fs::path& dir, json& timing) {
  const TwinMode mode = parse_twin_mode(s.mode);
  if (is_swe(s)) {
    if (mode != TwinMode::mlp) throw ConfigError("the SWE twin supports --mode mlp only");
    const auto rep = experiments::run_swe_twin(swe_options(s));
    timing["train_seconds"] = rep.seconds;
    save_twin(dir / "model.lttw", rep.train.model);
    write_metrics_csv(dir / "metrics.csv", rep.train.history);
    return {{"parameters", rep.train.model.parameter_count()},
            {"rel_reconstruction", rep.rel_reconstruction},
            {"rel_prediction", rep.rel_prediction}};
  }
  const OdeSystem sys = OdeSystem::by_name(s.system);
  if (mode == TwinMode::structured) {
    const auto o = ode_options(s);
    const PairDataset ds = sample_pairs_ode(sys, o.pairs, o.gap_cap, s.seed);
    TwinArchitecture arch;
    arch.mode = TwinMode::structured;
    experiments::StructuredOptions so;
    TrainConfig tc;
    tc.epochs = s.epochs >= 0 ? s.epochs : so.epochs;
    tc.schedule = LrSchedule::step_halving(so.lr, so.halving_period);
    tc.seed = s.seed;
    tc.curriculum_start_gap = so.curriculum_start_gap;
    tc.curriculum_epochs = std::min(so.curriculum_epochs, tc.epochs);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult tr = train_twin(ds, arch, tc);
    timing["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_twin(dir / "model.lttw", tr.model);
    write_metrics_csv(dir / "metrics.csv", tr.history);
    std::vector<std::vector<double>> W;
    for (Eigen::Index i = 0; i < tr.model.structured->generator.rows(); ++i) {
      W.emplace_back();
      for (Eigen::Index j = 0; j < tr.model.structured->generator.cols(); ++j)
        W.back().push_back(tr.model.structured->generator(i, j));
    }
    json out{{"parameters", tr.model.parameter_count()},
             {"final_loss", tr.history.empty() ? json(nullptr) : json(tr.history.back().train_loss)},
             {"generator", W}};
    if (sys.id == SystemId::harmonic) {
      const double w = sys.param("omega0");
      out["generator_error"] = (tr.model.structured->generator - Matrix{{0.0, 1.0}, {-w * w, 0.0}}).norm();
    }
    return out;
  }
  if (mode != TwinMode::identity_ae && mode != TwinMode::mlp)
    throw ConfigError("unsupported mode for ODE systems: " + s.mode);
  // Low-dimensional systems use the identity autoencoder regardless of
  // mlp/identity; the latent map is the learned part.
  const auto rep = experiments::run_ode_twin(sys, ode_options(s));
  timing["train_seconds"] = rep.seconds;
  save_twin(dir / "model.lttw", rep.train.model);
  write_metrics_csv(dir / "metrics.csv", rep.train.history);
  const ErrorBudget b = experiments::ode_error_budget(sys, rep);
  return {{"parameters", rep.parameters},       {"anchor_time", rep.anchor_time},
          {"direct_mse", rep.direct_mse},       {"recursive_mse", rep.recursive_mse},
          {"error_budget", budget_json(b)}};
}

json cmd_eval(const Settings& s, const fs::path& dir) {
  const TwinModel model = require_model(s);
  if (!s.profile.empty() && s.profile != "horizon") throw ConfigError("unknown profile '" + s.profile + "'");
  if (is_swe(s)) {
    const auto o = swe_options(s);
    const FieldTrajectory tr = swe_trajectory(o, 0);
    json steps = json::array();
    const SweState& x0 = tr.states.front();
    for (std::size_t k = 0; k < tr.states.size(); k += 50) {
      const Vector pred = twin_evaluate(model, x0.flatten(), x0.t, tr.states[k].t);
      const Vector truth = tr.states[k].flatten();
      steps.push_back({{"step", k},
                       {"rel_error", relative_error(model.norm.normalize_state(pred), model.norm.normalize_state(truth))}});
    }
    return {{"trajectory_seed", o.trajectory_seed}, {"profile", steps}};
  }
  const OdeSystem sys = OdeSystem::by_name(s.system);
  if (model.n_x != sys.dim) throw DimensionError("model dimension does not match system " + sys.name);
  const OdeSolution sol = solve(sys, sys.x0, sys.t_start, sys.t_end);
  const double h = (sys.t_end - sys.t_start) / 200.0;
  const auto prof = horizon_error_profile(
      model, [&](double t) { return sol(std::clamp(t, sys.t_start, sys.t_end)); }, sys.t_start, h, 200);
  if (s.profile == "horizon") write_profile_csv(dir / "profile.csv", prof);
  double d = 0.0, r = 0.0;
  for (const auto& p : prof) {
    d += p.direct_sq;
    r += p.rollout_sq;
  }
  return {{"direct_mse", d / static_cast<double>(prof.size())},
          {"recursive_mse", r / static_cast<double>(prof.size())},
          {"direct_log_slope", log_error_slope(prof, false)},
          {"rollout_log_slope", log_error_slope(prof, true)}};
}

json cmd_infer(const Settings& s, const fs::path& dir) {
  if (!is_swe(s)) throw ConfigError("infer requires --system swe");
  const TwinModel model = require_model(s);
  const auto o = swe_options(s);
  const auto rep = experiments::run_inference(model, swe_trajectory(o, 0), o);
  std::ostringstream z;
  z.precision(17);
  for (Eigen::Index i = 0; i < rep.infer.z.size(); ++i) z << rep.infer.z(i) << "\n";
  write_text(dir / "latent.txt", z.str());
  return {{"factor", o.factor},
          {"twin_obs", rep.twin_obs},
          {"bilinear_obs", rep.bilinear_obs},
          {"twin_forecast", rep.twin_forecast},
          {"twin_initial", rep.twin_initial},
          {"bilinear_forecast", rep.bilinear_forecast},
          {"residual", rep.infer.residual}};
}

json cmd_fourdvar(const Settings& s) {
  if (!is_swe(s)) throw ConfigError("4dvar requires --system swe");
  const TwinModel model = require_model(s);
  const auto o = swe_options(s);
  const auto rep = experiments::run_fourdvar(model, swe_trajectory(o, 0), o);
  return {{"factor", o.factor},
          {"background_obs", rep.background_obs},
          {"analysis_obs", rep.analysis_obs},
          {"analysis_forecast", rep.analysis_forecast},
          {"twin_forecast", rep.twin_forecast},
          {"steps", rep.steps},
          {"var_errors", rep.var_errors},
          {"twin_errors", rep.twin_errors},
          {"iterations", rep.opt.iterations},
          {"converged", rep.opt.converged}};
}

json cmd_compare(const Settings& s, json& timing) {
  std::vector<std::string> methods;
  {
    std::stringstream ss(s.methods);
    std::string m;
    while (std::getline(ss, m, ',')) methods.push_back(m);
  }
  auto has = [&](const std::string& m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  for (const auto& m : methods)
    if (m != "twin" && m != "lstm" && m != "deeponet" && m != "4dvar") throw ConfigError("unknown method '" + m + "'");
  if (!has("twin")) throw ConfigError("compare needs 'twin' among --methods");
  json out;
  if (!is_swe(s)) {
    if (has("deeponet") || has("4dvar")) throw ConfigError("deeponet and 4dvar need --system swe");
    const OdeSystem sys = OdeSystem::by_name(s.system);
    const TwinModel model = require_model(s);
    if (has("lstm")) {
      LstmTrainConfig lc;
      lc.hidden = sys.dim == 2 ? 10 : 12;
      lc.seed = s.seed;
      if (s.epochs >= 0) lc.epochs = s.epochs;
      const auto t0 = std::chrono::steady_clock::now();
      const auto rep = experiments::run_lstm_horizon(sys, model, lc);
      timing["lstm_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out["lstm"] = {{"parameters", rep.parameters}, {"log_slope", rep.lstm_slope}};
      out["twin"] = {{"parameters", model.parameter_count()}, {"log_slope", rep.twin_slope}};
    }
    return out;
  }
  const TwinModel model = require_model(s);
  const auto o = swe_options(s);
  const FieldTrajectory tr = swe_trajectory(o, 0);
  if (has("4dvar")) {
    const auto rep = experiments::run_fourdvar(model, tr, o);
    out["4dvar"] = {{"analysis_obs", rep.analysis_obs}, {"steps", rep.steps}, {"rel_error", rep.var_errors}};
    out["twin"]["fourdvar_steps_rel_error"] = rep.twin_errors;
  }
  if (has("deeponet")) {
    std::vector<FieldTrajectory> pool;
    for (std::size_t k = 0; k < o.trajectories; ++k) pool.push_back(swe_trajectory(o, k));
    DeepOnetTrainConfig dc;
    dc.seed = s.seed;
    dc.epochs = s.epochs >= 0 ? s.epochs : 1000;
    const std::vector<FieldTrajectory> test{pool.front()};
    const std::vector<int> steps{100, 200, 300, 400, 500, 600};
    const auto rep = experiments::run_operator_comparison(model, pool, test, steps, dc);
    timing["deeponet_seconds"] = rep.deeponet_seconds;
    out["deeponet"]["rel_error"] = rep.deeponet_error;
    out["twin"]["rel_error"] = rep.twin_error;
    out["steps"] = rep.steps;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latwin: latent twin surrogates for ODE and shallow-water dynamics"};
  app.require_subcommand(1);
  Settings s;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--system", s.system, "harmonic, sir, lotka-volterra, lorenz63 or swe");
    sub->add_option("--seed", s.seed, "random seed");
    sub->add_option("--epochs", s.epochs, "training epochs");
    sub->add_option("--grid", s.grid, "SWE grid size (N x N)");
    sub->add_option("--factor", s.factor, "observation decimation factor");
    sub->add_option("--gap-cap", s.gap_cap, "maximum |t2 - t1| of training pairs");
    sub->add_option("--mode", s.mode, "mlp, structured or identity");
    sub->add_option("--pairs", s.pairs, "number of training pairs J");
    sub->add_option("--restarts", s.restarts, "independent initializations for ODE twins");
    sub->add_option("--trajectories", s.trajectories, "SWE simulations feeding the pair dataset");
    sub->add_option("--model", s.model, "twin checkpoint (.lttw)");
    sub->add_option("--threads", s.threads, "worker threads");
    sub->add_flag("--deterministic", s.deterministic, "fixed reduction order");
    sub->add_option("--config", s.config, "key=value file applied before command-line flags");
  };
  const std::vector<std::pair<std::string, std::string>> names{
      {"simulate", "integrate an ODE system or simulate the SWE"},
      {"dataset", "sample a random time-pair dataset"},
      {"train", "train a latent twin"},
      {"eval", "evaluate a trained twin"},
      {"infer", "infer a state from a coarse noisy observation"},
      {"4dvar", "strong-constraint 4D-Var baseline"},
      {"compare", "compare the twin with baselines"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, desc] : names) {
    subs[name] = app.add_subcommand(name, desc);
    add_common(subs[name]);
  }
  subs["eval"]->add_option("--profile", s.profile, "write an error profile (horizon)");
  subs["compare"]->add_option("--methods", s.methods, "comma-separated: twin,lstm,deeponet,4dvar");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;

  try {
    if (!s.config.empty()) {
      // Config file first, then re-apply explicit flags on top of it.
      Settings merged;
      apply_config_file(merged, s.config);
      CLI::App* sub = subs[command];
      auto take = [&](const char* flag, auto& dst, const auto& src) {
        if (sub->count(flag) > 0) dst = src;
      };
      take("--system", merged.system, s.system);
      take("--seed", merged.seed, s.seed);
      take("--epochs", merged.epochs, s.epochs);
      take("--grid", merged.grid, s.grid);
      take("--factor", merged.factor, s.factor);
      take("--gap-cap", merged.gap_cap, s.gap_cap);
      take("--mode", merged.mode, s.mode);
      take("--pairs", merged.pairs, s.pairs);
      take("--restarts", merged.restarts, s.restarts);
      take("--trajectories", merged.trajectories, s.trajectories);
      take("--model", merged.model, s.model);
      take("--threads", merged.threads, s.threads);
      take("--deterministic", merged.deterministic, s.deterministic);
      if (command == "eval") take("--profile", merged.profile, s.profile);
      if (command == "compare") take("--methods", merged.methods, s.methods);
      merged.config = s.config;
      s = merged;
    }
    if (s.threads < 1) throw ConfigError("--threads must be >= 1");
    if (s.grid < 8) throw ConfigError("--grid must be >= 8");
    if (s.factor < 1) throw ConfigError("--factor must be >= 1");
    if (s.gap_cap < 0) throw ConfigError("--gap-cap must be >= 0");
    Eigen::setNbThreads(s.threads);

    const fs::path dir = fresh_run_dir(command, s);
    write_text(dir / "config.txt", resolved_config(s, command));
    json timing;
    const auto t0 = std::chrono::steady_clock::now();
    json metrics;
    if (command == "simulate") metrics = cmd_simulate(s, dir);
    else if (command == "dataset") metrics = cmd_dataset(s, dir);
    else if (command == "train") metrics = cmd_train(s, dir, timing);
    else if (command == "eval") metrics = cmd_eval(s, dir);
    else if (command == "infer") metrics = cmd_infer(s, dir);
    else if (command == "4dvar") metrics = cmd_fourdvar(s);
    else metrics = cmd_compare(s, timing);
    timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "metrics.json", metrics);
    write_json(dir / "timing.json", timing);
    std::cout << dir.string() << "\n" << metrics.dump(2) << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  }
}
