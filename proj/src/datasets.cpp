#include "latwin/datasets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "latwin/binary_io.hpp"
#include "json.hpp"

namespace latwin {

NormStats NormStats::identity(Eigen::Index n) {
  NormStats s;
  s.state_mean = Vector::Zero(n);
  s.state_std = Vector::Ones(n);
  return s;
}

Vector NormStats::normalize_state(const Vector& x) const {
  if (x.size() != dim()) throw DimensionError("NormStats: state dimension mismatch");
  return ((x - state_mean).array() / state_std.array()).matrix();
}

Vector NormStats::denormalize_state(const Vector& z) const {
  if (z.size() != dim()) throw DimensionError("NormStats: state dimension mismatch");
  return (z.array() * state_std.array()).matrix() + state_mean;
}

Matrix NormStats::normalize_states(const Matrix& rows) const {
  if (rows.cols() != dim()) throw DimensionError("NormStats: state dimension mismatch");
  Matrix out = rows;
  out.rowwise() -= state_mean.transpose();
  out.array().rowwise() /= state_std.transpose().array();
  return out;
}

Matrix NormStats::denormalize_states(const Matrix& rows) const {
  if (rows.cols() != dim()) throw DimensionError("NormStats: state dimension mismatch");
  Matrix out = rows;
  out.array().rowwise() *= state_std.transpose().array();
  out.rowwise() += state_mean.transpose();
  return out;
}

PairSample PairDataset::sample(std::size_t j) const {
  if (j >= size()) throw ConfigError("PairDataset: sample index out of range");
  const auto r = static_cast<Eigen::Index>(j);
  return {t1(r), x1.row(r).transpose(), t2(r), x2.row(r).transpose()};
}

void PairDataset::make_split(double train_fraction) {
  if (!(train_fraction > 0 && train_fraction <= 1)) throw ConfigError("split fraction must lie in (0,1]");
  std::vector<std::size_t> order(size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng = RngStream(seed).fork(0x5917);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
}

void PairDataset::validate() const {
  const auto J = t1.size();
  if (t2.size() != J || x1.rows() != J || x2.rows() != J || x1.cols() != n_x || x2.cols() != n_x)
    throw DimensionError("PairDataset: inconsistent sample arrays");
  std::vector<char> seen(size(), 0);
  for (auto idx : train) {
    if (idx >= size() || seen[idx]) throw ConfigError("PairDataset: split overlaps or is out of range");
    seen[idx] = 1;
  }
  for (auto idx : test) {
    if (idx >= size() || seen[idx]) throw ConfigError("PairDataset: split overlaps or is out of range");
    seen[idx] = 1;
  }
  if (!train.empty() || !test.empty())
    for (char c : seen)
      if (!c) throw ConfigError("PairDataset: split is not exhaustive");
}

namespace {

void draw_times(RngStream& rng, double lo, double hi, std::optional<double> gap_cap, double& t1,
                double& t2) {
  for (;;) {
    t1 = lo == hi ? lo : rng.uniform(lo, hi);
    t2 = lo == hi ? lo : rng.uniform(lo, hi);
    if (!gap_cap || std::abs(t2 - t1) <= *gap_cap) return;
  }
}

}  // namespace

PairDataset sample_pairs_ode(const OdeSolution& reference, std::size_t J,
                             std::optional<double> gap_cap, std::uint64_t seed) {
  if (J < 1) throw ConfigError("sample_pairs_ode: J must be >= 1");
  if (gap_cap && !(*gap_cap > 0)) throw ConfigError("sample_pairs_ode: gap cap must be positive");
  const double lo = std::min(reference.t_begin(), reference.t_end());
  const double hi = std::max(reference.t_begin(), reference.t_end());
  const Eigen::Index n = reference.steps().states.front().size();
  PairDataset ds;
  ds.n_x = n;
  ds.seed = seed;
  ds.t1.resize(static_cast<Eigen::Index>(J));
  ds.t2.resize(static_cast<Eigen::Index>(J));
  ds.x1.resize(static_cast<Eigen::Index>(J), n);
  ds.x2.resize(static_cast<Eigen::Index>(J), n);
  RngStream rng(seed);
  for (std::size_t j = 0; j < J; ++j) {
    double a, b;
    draw_times(rng, lo, hi, gap_cap, a, b);
    const auto r = static_cast<Eigen::Index>(j);
    ds.t1(r) = a;
    ds.t2(r) = b;
    ds.x1.row(r) = reference(a).transpose();
    ds.x2.row(r) = reference(b).transpose();
  }
  ds.norm = NormStats::identity(n);
  ds.make_split();
  return ds;
}

PairDataset sample_pairs_ode(const OdeSystem& sys, std::size_t J, std::optional<double> gap_cap,
                             std::uint64_t seed, const IntegratorOptions& opts) {
  const auto reference = solve(sys, sys.x0, sys.t_start, sys.t_end, opts);
  return sample_pairs_ode(reference, J, gap_cap, seed);
}

PairDataset sample_pairs_field(const std::vector<FieldSeries>& trajectories, std::size_t J,
                               std::uint64_t seed) {
  if (trajectories.empty()) throw ConfigError("sample_pairs_field: no trajectories");
  const std::size_t n_times = trajectories.front().times.size();
  for (const auto& tr : trajectories)
    if (tr.times.size() != n_times) throw ConfigError("sample_pairs_field: trajectories differ in length");
  return sample_pairs_generated(trajectories.size(), n_times, J, seed,
                                [&](std::size_t k) { return trajectories[k]; });
}

PairDataset sample_pairs_generated(std::size_t n_traj, std::size_t n_times, std::size_t J, std::uint64_t seed,
                                   const std::function<FieldSeries(std::size_t)>& make) {
  if (n_traj == 0 || n_times == 0) throw ConfigError("sample_pairs_field: no trajectories");
  struct Pick {
    std::size_t traj, i1, i2;
  };
  std::vector<Pick> picks(J);
  RngStream rng(seed);
  for (auto& p : picks) {
    p.traj = rng.below(n_traj);
    p.i1 = rng.below(n_times);
    p.i2 = rng.below(n_times);
  }
  PairDataset ds;
  ds.seed = seed;
  ds.t1.resize(static_cast<Eigen::Index>(J));
  ds.t2.resize(static_cast<Eigen::Index>(J));
  for (std::size_t k = 0; k < n_traj; ++k) {
    bool used = false;
    for (const auto& p : picks) used = used || p.traj == k;
    if (!used) continue;
    const FieldSeries tr = make(k);
    if (tr.states.size() != n_times || tr.times.size() != n_times)
      throw ConfigError("sample_pairs_field: empty or malformed trajectory");
    if (ds.n_x == 0) {
      ds.n_x = tr.states.front().size();
      ds.x1.resize(static_cast<Eigen::Index>(J), ds.n_x);
      ds.x2.resize(static_cast<Eigen::Index>(J), ds.n_x);
    }
    for (const auto& s : tr.states)
      if (s.size() != ds.n_x) throw DimensionError("sample_pairs_field: inconsistent state dimension");
    for (std::size_t j = 0; j < J; ++j) {
      const auto& p = picks[j];
      if (p.traj != k) continue;
      const auto r = static_cast<Eigen::Index>(j);
      ds.t1(r) = tr.times[p.i1];
      ds.t2(r) = tr.times[p.i2];
      ds.x1.row(r) = tr.states[p.i1].transpose();
      ds.x2.row(r) = tr.states[p.i2].transpose();
    }
  }
  ds.norm = NormStats::identity(ds.n_x);
  ds.make_split();
  return ds;
}

NormStats compute_norm_stats(const PairDataset& ds, int channels) {
  if (channels < 1 || ds.n_x % channels != 0) throw ConfigError("compute_norm_stats: invalid channel count");
  const auto& rows = ds.train.empty() ? ds.test : ds.train;
  NormStats s = NormStats::identity(ds.n_x);
  if (rows.empty()) return s;
  const double count = 2.0 * static_cast<double>(rows.size());

  Vector sum = Vector::Zero(ds.n_x), sumsq = Vector::Zero(ds.n_x);
  double tsum = 0.0, tsq = 0.0;
  for (auto idx : rows) {
    const auto r = static_cast<Eigen::Index>(idx);
    sum += ds.x1.row(r).transpose() + ds.x2.row(r).transpose();
    tsum += ds.t1(r) + ds.t2(r);
  }
  Vector mean = sum / count;
  const double tmean = tsum / count;
  for (auto idx : rows) {
    const auto r = static_cast<Eigen::Index>(idx);
    sumsq += (ds.x1.row(r).transpose() - mean).cwiseAbs2() + (ds.x2.row(r).transpose() - mean).cwiseAbs2();
    tsq += (ds.t1(r) - tmean) * (ds.t1(r) - tmean) + (ds.t2(r) - tmean) * (ds.t2(r) - tmean);
  }
  Vector var = sumsq / count;

  if (channels > 1) {
    const Eigen::Index block = ds.n_x / channels;
    for (int c = 0; c < channels; ++c) {
      auto m = mean.segment(c * block, block);
      auto v = var.segment(c * block, block);
      const double pooled_mean = m.mean();
      // Pooled variance about the pooled mean.
      const double pooled_var = (v.array() + (m.array() - pooled_mean).square()).mean();
      m.setConstant(pooled_mean);
      v.setConstant(pooled_var);
    }
  }
  s.state_mean = mean;
  s.state_std = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < s.state_std.size(); ++i)
    if (!(s.state_std(i) > 1e-300)) s.state_std(i) = 1.0;
  s.time_mean = tmean;
  s.time_std = std::sqrt(tsq / count);
  if (!(s.time_std > 0)) s.time_std = 1.0;
  return s;
}

PairDataset normalize(const PairDataset& ds, std::optional<NormStats> stats, int channels) {
  if (ds.normalized) return ds;
  PairDataset out = ds;
  out.norm = stats ? *stats : compute_norm_stats(ds, channels);
  out.x1 = out.norm.normalize_states(ds.x1);
  out.x2 = out.norm.normalize_states(ds.x2);
  out.t1 = ((ds.t1.array() - out.norm.time_mean) / out.norm.time_std).matrix();
  out.t2 = ((ds.t2.array() - out.norm.time_mean) / out.norm.time_std).matrix();
  out.normalized = true;
  return out;
}

PairDataset denormalize(const PairDataset& ds) {
  if (!ds.normalized) return ds;
  PairDataset out = ds;
  out.x1 = ds.norm.denormalize_states(ds.x1);
  out.x2 = ds.norm.denormalize_states(ds.x2);
  out.t1 = (ds.t1.array() * ds.norm.time_std + ds.norm.time_mean).matrix();
  out.t2 = (ds.t2.array() * ds.norm.time_std + ds.norm.time_mean).matrix();
  out.normalized = false;
  return out;
}

Vector denormalize(const NormStats& stats, const Vector& z) { return stats.denormalize_state(z); }

namespace {

constexpr std::uint32_t kPairVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".json");
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save(const PairDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  {
    io::Writer w(path);
    w.magic("LTW1");
    w.u32(kPairVersion);
    w.u32(static_cast<std::uint32_t>(ds.n_x));
    w.u64(ds.size());
    for (std::size_t j = 0; j < ds.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      w.f64(ds.t1(r));
      const Vector a = ds.x1.row(r).transpose();
      w.vector(a);
      w.f64(ds.t2(r));
      const Vector b = ds.x2.row(r).transpose();
      w.vector(b);
    }
    w.close();
  }
  nlohmann::json side;
  side["format"] = "LTW1";
  side["version"] = kPairVersion;
  side["n_x"] = ds.n_x;
  side["J"] = ds.size();
  side["seed"] = ds.seed;
  side["normalized"] = ds.normalized;
  side["norm"] = {{"state_mean", to_std(ds.norm.state_mean)},
                  {"state_std", to_std(ds.norm.state_std)},
                  {"time_mean", ds.norm.time_mean},
                  {"time_std", ds.norm.time_std}};
  side["train"] = ds.train;
  side["test"] = ds.test;
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write sidecar for " + path.string());
  out << side.dump(1) << '\n';
  if (!out) throw IoError("sidecar write failed for " + path.string());
}

PairDataset load(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("LTW1");
  const auto version = r.u32();
  if (version != kPairVersion) throw IoError("LTW1: unsupported version " + std::to_string(version));
  PairDataset ds;
  ds.n_x = r.u32();
  const auto J = r.u64();
  const std::uint64_t record = 8ull * (2ull + 2ull * static_cast<std::uint64_t>(ds.n_x));
  if (J > 0 && r.remaining() / record < J) throw IoError("LTW1: truncated file " + path.string());
  const auto rows = static_cast<Eigen::Index>(J);
  ds.t1.resize(rows);
  ds.t2.resize(rows);
  ds.x1.resize(rows, ds.n_x);
  ds.x2.resize(rows, ds.n_x);
  for (Eigen::Index j = 0; j < rows; ++j) {
    ds.t1(j) = r.f64();
    ds.x1.row(j) = r.vector(ds.n_x).transpose();
    ds.t2(j) = r.f64();
    ds.x2.row(j) = r.vector(ds.n_x).transpose();
  }
  if (!r.at_end()) throw IoError("LTW1: trailing bytes in " + path.string());

  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("missing dataset sidecar " + sidecar_path(path).string());
  nlohmann::json side;
  try {
    in >> side;
    if (side.at("J").get<std::uint64_t>() != J || side.at("n_x").get<Eigen::Index>() != ds.n_x)
      throw IoError("dataset sidecar does not match " + path.string());
    ds.seed = side.at("seed").get<std::uint64_t>();
    ds.normalized = side.at("normalized").get<bool>();
    const auto& n = side.at("norm");
    ds.norm.state_mean = from_std(n.at("state_mean").get<std::vector<double>>());
    ds.norm.state_std = from_std(n.at("state_std").get<std::vector<double>>());
    ds.norm.time_mean = n.at("time_mean").get<double>();
    ds.norm.time_std = n.at("time_std").get<double>();
    ds.train = side.at("train").get<std::vector<std::size_t>>();
    ds.test = side.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed dataset sidecar: ") + e.what());
  }
  ds.validate();
  return ds;
}

std::uint64_t dataset_hash(const PairDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_bytes = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  mix_bytes(ds.t1.data(), sizeof(double) * static_cast<std::size_t>(ds.t1.size()));
  mix_bytes(ds.t2.data(), sizeof(double) * static_cast<std::size_t>(ds.t2.size()));
  mix_bytes(ds.x1.data(), sizeof(double) * static_cast<std::size_t>(ds.x1.size()));
  mix_bytes(ds.x2.data(), sizeof(double) * static_cast<std::size_t>(ds.x2.size()));
  mix_bytes(ds.train.data(), sizeof(std::size_t) * ds.train.size());
  mix_bytes(ds.test.data(), sizeof(std::size_t) * ds.test.size());
  return h;
}

}  // namespace latwin
