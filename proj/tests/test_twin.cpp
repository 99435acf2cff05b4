#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "latwin/errors.hpp"
#include "latwin/twin.hpp"

using namespace latwin;

namespace {

// Travelling pulses on a 16-point line, one per trajectory speed.
PairDataset pulse_pairs(std::size_t J, std::uint64_t seed) {
  std::vector<FieldSeries> trajs;
  for (double speed : {0.5, 0.8, 1.1}) {
    FieldSeries s;
    for (int k = 0; k < 21; ++k) {
      const double t = 0.5 * k;
      Vector x(16);
      for (int i = 0; i < 16; ++i) x(i) = std::exp(-std::pow(i - 2.0 - speed * t, 2) / 8.0);
      s.times.push_back(t);
      s.states.push_back(x);
    }
    trajs.push_back(s);
  }
  return normalize(sample_pairs_field(trajs, J, seed));
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.schedule = LrSchedule::constant(3e-3);
  c.eval_every = 1;
  return c;
}

}  // namespace

TEST_SUITE("twin") {
  TEST_CASE("mode names") {
    for (TwinMode m : {TwinMode::mlp, TwinMode::structured, TwinMode::identity_ae})
      CHECK(parse_twin_mode(twin_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_twin_mode("koopman"), ConfigError);
  }

  TEST_CASE("residual map starts at the identity") {
    TwinArchitecture arch = TwinArchitecture::ode_default(3);
    arch.residual = true;
    const TwinModel m = make_twin(arch, 3, NormStats::identity(3), 1);
    const Vector x{{0.3, -1.2, 2.0}};
    CHECK((twin_evaluate(m, x, 1.0, 1.0) - x).norm() < 1e-14);
    CHECK((twin_evaluate(m, x, 1.0, 4.0) - x).norm() < 1e-14);
  }

  TEST_CASE("default ODE architecture sizes") {
    const auto m2 = make_twin(TwinArchitecture::ode_default(2), 2, NormStats::identity(2), 1);
    const auto m3 = make_twin(TwinArchitecture::ode_default(3), 3, NormStats::identity(3), 1);
    // (n+2)->16->8->4 softmax, 4->n linear
    CHECK(m2.parameter_count() == (4 * 16 + 16) + (16 * 8 + 8) + (8 * 4 + 4) + (4 * 2 + 2));
    CHECK(m3.parameter_count() == (5 * 16 + 16) + (16 * 8 + 8) + (8 * 4 + 4) + (4 * 3 + 3));
  }

  TEST_CASE("rollout with zero steps") {
    const auto m = make_twin(TwinArchitecture::ode_default(2), 2, NormStats::identity(2), 1);
    const Trajectory t = twin_rollout(m, Vector{{1.0, 2.0}}, 0.0, 0.1, 0);
    REQUIRE(t.size() == 1);
    CHECK(t.states[0] == Vector{{1.0, 2.0}});
  }

  TEST_CASE("recursive evaluation with a step wider than the gap is the direct evaluation") {
    const auto m = make_twin(TwinArchitecture::ode_default(2), 2, NormStats::identity(2), 4);
    const Matrix X{{1.0, 0.0}, {0.5, -0.5}};
    const Vector t1{{0.0, 1.0}}, t2{{0.3, 0.2}};
    CHECK((twin_recursive(m, X, t1, t2, 1.0) - twin_evaluate(m, X, t1, t2)).norm() < 1e-14);
  }

  TEST_CASE("identity autoencoder has zero reconstruction loss throughout") {
    const PairDataset ds = normalize(sample_pairs_ode(OdeSystem::by_name("harmonic"), 512, std::nullopt, 1));
    const auto res = train_twin(ds, TwinArchitecture::ode_default(2), quick(5));
    for (const auto& e : res.history) CHECK(e.test_rec_mse == 0.0);
    const ErrorBudget b = diagnose_error_budget(res.model, ds, 0.0, 1.0);
    CHECK(b.eps_ae == 0.0);
  }

  TEST_CASE("untrained model gives a well-formed error budget") {
    const PairDataset ds = pulse_pairs(200, 2);
    const auto m = make_twin(TwinArchitecture::field_default({12}, 4), 16, ds.norm, 3);
    const ErrorBudget b = diagnose_error_budget(m, ds, 0.1, 2.0);
    CHECK(b.end_to_end.size() == ds.test.size());
    CHECK(std::isfinite(b.bound));
    CHECK(b.eps_map > 0.0);
    CHECK(b.holds());
  }

  TEST_CASE("plain autoencoder training when the prediction weight is zero") {
    const PairDataset ds = pulse_pairs(400, 3);
    TrainConfig c = quick(40);
    c.w_pred = 0.0;
    const auto res = train_twin(ds, TwinArchitecture::field_default({24}, 6), c);
    CHECK(res.history.back().test_rec_mse < 0.5 * res.history.front().test_rec_mse);
  }

  TEST_CASE("mlp twin learns travelling pulses and satisfies the error budget") {
    const PairDataset ds = pulse_pairs(800, 4);
    const auto res = train_twin(ds, TwinArchitecture::field_default({32}, 8), quick(150));
    const auto [rec, pred] = twin_mse(res.model, ds, ds.test);
    CHECK(rec < 0.05);
    CHECK(pred < 0.1);
    // Generous flow rate: the bound must hold for any L_G at least the true one.
    const ErrorBudget b = diagnose_error_budget(res.model, ds, 1.0, 2.0);
    CHECK(b.holds());
  }

  TEST_CASE("training is deterministic and restarts never do worse") {
    const PairDataset ds = normalize(sample_pairs_ode(OdeSystem::by_name("sir"), 512, std::nullopt, 5));
    const auto a = train_twin(ds, TwinArchitecture::ode_default(3), quick(5));
    const auto b = train_twin(ds, TwinArchitecture::ode_default(3), quick(5));
    CHECK(a.history.back().train_loss == b.history.back().train_loss);
    CHECK(a.model.latent.layers().back().weight == b.model.latent.layers().back().weight);
    TrainConfig r = quick(5);
    r.restarts = 3;
    const auto c = train_twin(ds, TwinArchitecture::ode_default(3), r);
    CHECK(c.history.back().train_loss <= a.history.back().train_loss);
    r.restarts = 0;
    CHECK_THROWS_AS(train_twin(ds, TwinArchitecture::ode_default(3), r), ConfigError);
  }

  TEST_CASE("horizon profile columns at zero gap") {
    const PairDataset ds = pulse_pairs(300, 6);
    const auto res = train_twin(ds, TwinArchitecture::field_default({16}, 6), quick(10));
    const auto reference = [](double t) {
      Vector x(16);
      for (int i = 0; i < 16; ++i) x(i) = std::exp(-std::pow(i - 2.0 - 0.8 * t, 2) / 8.0);
      return x;
    };
    const auto prof = horizon_error_profile(res.model, reference, 1.0, 0.5, 10);
    REQUIRE(prof.size() == 11);
    CHECK(prof[0].gap == 0.0);
    const Vector x = reference(1.0);
    CHECK(prof[0].direct_error == doctest::Approx((twin_evaluate(res.model, x, 1.0, 1.0) - x).norm()).epsilon(1e-12));
    CHECK(prof[0].rollout_error == 0.0);
    const Vector ae = res.model.norm.denormalize_state(
        decode(res.model, encode(res.model, Matrix(res.model.norm.normalize_state(x).transpose()))).row(0).transpose());
    CHECK(prof[0].autoencoder_error == doctest::Approx((ae - x).norm()).epsilon(1e-12));
  }

  TEST_CASE("structured mode through train_twin") {
    const OdeSystem h = OdeSystem::by_name("harmonic");
    const PairDataset ds = normalize(sample_pairs_ode(h, 4096, std::nullopt, 42));
    TwinArchitecture arch;
    arch.mode = TwinMode::structured;
    TrainConfig c;
    c.epochs = 60;
    c.batch_size = 32;
    c.schedule = LrSchedule::step_halving(1e-2, 20);
    c.curriculum_start_gap = 0.5;
    c.curriculum_epochs = 30;
    const auto res = train_twin(ds, arch, c);
    const Matrix M{{0.0, 1.0}, {-4.0, 0.0}};
    CHECK((res.model.structured->generator - M).norm() < 1e-3);
    CHECK((twin_evaluate(res.model, h.x0, 0.0, 3.0) - Vector{{std::cos(6.0), -2 * std::sin(6.0)}}).norm() < 1e-3);
  }

  TEST_CASE("checkpoint round trip for every mode") {
    const PairDataset ds = pulse_pairs(100, 7);
    TwinArchitecture s;
    s.mode = TwinMode::structured;
    s.structured_rank = 3;
    for (const auto& [arch, n] : std::vector<std::pair<TwinArchitecture, Eigen::Index>>{
             {TwinArchitecture::field_default({8}, 4), 16}, {TwinArchitecture::ode_default(2), 2}, {s, 16}}) {
      const TwinModel m = make_twin(arch, n, n == 16 ? ds.norm : NormStats::identity(2), 9);
      const auto path = testing::scratch("model.lttw");
      save_twin(path, m);
      const TwinModel back = load_twin(path);
      CHECK(back.mode == m.mode);
      CHECK(back.parameter_count() == m.parameter_count());
      const Vector x = Vector::LinSpaced(n, -1.0, 1.0);
      CHECK((twin_evaluate(back, x, 0.5, 2.0) - twin_evaluate(m, x, 0.5, 2.0)).norm() == 0.0);
    }
    const auto bad = testing::scratch("bad.lttw");
    {
      std::ofstream out(bad, std::ios::binary);
      out << "NOPE";
    }
    CHECK_THROWS_AS(load_twin(bad), IoError);
  }

  TEST_CASE("metrics csv") {
    std::vector<EpochMetrics> h{{1, 0.5, 0.1, 0.2, 1e-3}};
    const auto path = testing::scratch("metrics.csv");
    write_metrics_csv(path, h);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,train_loss,test_rec_mse,test_pred_mse,lr");
  }
}
