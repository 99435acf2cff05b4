#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latwin/autodiff.hpp"
#include "latwin/errors.hpp"

using namespace latwin;

namespace {

Mlp random_net(std::vector<int> widths, std::vector<Activation> acts, std::uint64_t seed) {
  RngStream rng(seed);
  Mlp net = Mlp::xavier(widths, acts, rng);
  // Non-zero biases so their gradients are exercised too.
  for (auto& layer : net.mutable_layers()) layer.bias = testing::random_vector(rng, layer.bias.size(), 0.3);
  return net;
}

double weighted_output(const Mlp& net, const Matrix& X, const Matrix& C) {
  return infer(net, X).cwiseProduct(C).sum();
}

// Largest relative deviation between the reverse-mode gradient and central
// differences over every parameter and input entry.
double gradient_check(Mlp net, const Matrix& X, const Matrix& C) {
  auto fr = forward(net, X);
  MlpGrad g = MlpGrad::zeros_like(net);
  const Matrix dX = backward(fr.tape, C, g);
  const double h = 1e-6;
  double worst = 0.0;
  auto compare = [&](double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  ParamSpans ps = net.parameters();
  const ConstParamSpans gs = g.spans();
  for (std::size_t b = 0; b < ps.size(); ++b)
    for (std::size_t i = 0; i < ps[b].size(); ++i) {
      const double keep = ps[b][i];
      ps[b][i] = keep + h;
      const double up = weighted_output(net, X, C);
      ps[b][i] = keep - h;
      const double down = weighted_output(net, X, C);
      ps[b][i] = keep;
      compare(gs[b][i], (up - down) / (2 * h));
    }
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      Matrix Xp = X, Xm = X;
      Xp(r, c) += h;
      Xm(r, c) -= h;
      compare(dX(r, c), (weighted_output(net, Xp, C) - weighted_output(net, Xm, C)) / (2 * h));
    }
  return worst;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("identity layer passes input through") {
    DenseLayer l{Matrix::Identity(3, 3), Vector::Zero(3), Activation::identity};
    const Mlp net({l});
    const Vector x{{1.0, -2.0, 3.5}};
    CHECK(infer(net, x) == x);
  }

  TEST_CASE("softmax rows sum to one") {
    const Mlp net = random_net({4, 5}, {Activation::softmax}, 2);
    RngStream rng(1);
    const Matrix Y = infer(net, testing::random_matrix(rng, 7, 4, 3.0));
    for (Eigen::Index r = 0; r < Y.rows(); ++r) CHECK(std::abs(Y.row(r).sum() - 1.0) < 1e-12);
    CHECK(Y.minCoeff() >= 0.0);
  }

  TEST_CASE("two-layer relu network against hand evaluation") {
    DenseLayer l1{Matrix{{1.0, -1.0}, {2.0, 0.0}}, Vector{{0.0, -1.0}}, Activation::relu};
    DenseLayer l2{Matrix{{3.0, 4.0}}, Vector{{0.5}}, Activation::identity};
    const Mlp net({l1, l2});
    // pre-activations (-1, 1) -> relu (0, 1) -> 3*0 + 4*1 + 0.5
    CHECK(infer(net, Vector{{1.0, 2.0}})(0) == doctest::Approx(4.5));
  }

  TEST_CASE("linear layer with squared loss has the closed-form gradient") {
    RngStream rng(4);
    const Matrix W = testing::random_matrix(rng, 2, 3);
    const Vector x = testing::random_vector(rng, 3), t = testing::random_vector(rng, 2);
    const Mlp net({DenseLayer{W, Vector::Zero(2), Activation::identity}});
    auto fr = forward(net, Matrix(x.transpose()));
    const Vector r = W * x - t;
    MlpGrad g = MlpGrad::zeros_like(net);
    const Matrix dX = backward(fr.tape, Matrix(2.0 * r.transpose()), g);
    CHECK((g.weight[0] - 2.0 * r * x.transpose()).norm() < 1e-13);
    CHECK((dX.row(0).transpose() - 2.0 * W.transpose() * r).norm() < 1e-13);
  }

  TEST_CASE("relu blocks the gradient of an inactive unit") {
    DenseLayer l1{Matrix{{1.0}, {-1.0}}, Vector::Zero(2), Activation::relu};
    DenseLayer l2{Matrix{{1.0, 1.0}}, Vector::Zero(1), Activation::identity};
    const Mlp net({l1, l2});
    auto fr = forward(net, Matrix{{2.0}});
    MlpGrad g = MlpGrad::zeros_like(net);
    backward(fr.tape, Matrix{{1.0}}, g);
    CHECK(g.weight[0](1, 0) == 0.0);
    CHECK(g.bias[0](1) == 0.0);
    CHECK(g.weight[0](0, 0) == 2.0);
  }

  TEST_CASE("three-layer tanh network passes the finite-difference check") {
    RngStream rng(6);
    const Mlp net = random_net({3, 5, 4, 2}, {Activation::tanh, Activation::tanh, Activation::identity}, 12);
    const Matrix X = testing::random_matrix(rng, 4, 3);
    const Matrix C = testing::random_matrix(rng, 4, 2);
    CHECK(gradient_check(net, X, C) < 1e-5);
  }

  TEST_CASE("softmax and relu layers pass the finite-difference check") {
    RngStream rng(7);
    const Mlp net = random_net({4, 16, 8, 4, 3},
                               {Activation::softmax, Activation::softmax, Activation::softmax, Activation::identity}, 13);
    CHECK(gradient_check(net, testing::random_matrix(rng, 3, 4), testing::random_matrix(rng, 3, 3)) < 1e-5);
    const Mlp relu = random_net({4, 6, 3}, {Activation::relu, Activation::identity}, 14);
    CHECK(gradient_check(relu, testing::random_matrix(rng, 5, 4), testing::random_matrix(rng, 5, 3)) < 1e-5);
  }

  TEST_CASE("backward rejects a stale tape") {
    Mlp net = random_net({2, 2}, {Activation::tanh}, 1);
    auto fr = forward(net, Matrix::Ones(1, 2));
    net.mutable_layers();
    MlpGrad g = MlpGrad::zeros_like(net);
    CHECK_THROWS(backward(fr.tape, Matrix::Ones(1, 2), g));
  }

  TEST_CASE("Adam: zero gradient, first step and the fixed-gradient limit") {
    Vector p{{1.0, -2.0}};
    const Vector zero = Vector::Zero(2);
    AdamState s;
    adam_step(s, {std::span<double>(p.data(), 2)}, {std::span<const double>(zero.data(), 2)});
    CHECK(p == Vector{{1.0, -2.0}});

    AdamState a;
    a.lr = 0.01;
    Vector q{{0.0, 0.0}};
    const Vector g{{0.5, -3.0}};
    for (int k = 0; k < 200; ++k) {
      const Vector before = q;
      adam_step(a, {std::span<double>(q.data(), 2)}, {std::span<const double>(g.data(), 2)});
      const Vector step = q - before;
      // Bias correction makes m_hat = g and v_hat = g^2 at every step.
      for (int i = 0; i < 2; ++i) CHECK(step(i) == doctest::Approx(-a.lr * g(i) / (std::abs(g(i)) + a.eps)).epsilon(1e-10));
    }
  }

  TEST_CASE("learning-rate schedules") {
    LrSchedule c = LrSchedule::constant(1e-3);
    for (int e = 0; e < 1000; e += 97) CHECK(schedule_update(c, e, 1.0) == 1e-3);
    LrSchedule h = LrSchedule::step_halving(1e-3, 250);
    CHECK(schedule_update(h, 249, 1.0) == doctest::Approx(1e-3));
    CHECK(schedule_update(h, 250, 1.0) == doctest::Approx(5e-4));
    CHECK(schedule_update(h, 750, 1.0) == doctest::Approx(1.25e-4));
    LrSchedule p = LrSchedule::plateau(1e-3, 0.7, 10);
    schedule_update(p, 0, 1.0);
    double lr = 0.0;
    for (int e = 1; e <= 10; ++e) lr = schedule_update(p, e, 2.0);
    CHECK(lr == doctest::Approx(7e-4));
  }

  TEST_CASE("mlp checkpoint round trip and truncation") {
    const Mlp net = random_net({3, 4, 2}, {Activation::relu, Activation::softmax}, 21);
    const auto path = testing::scratch("net.ltnn");
    save_mlp(path, net);
    const Mlp back = load_mlp(path);
    REQUIRE(back.layers().size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back.layers()[i].weight == net.layers()[i].weight);
      CHECK(back.layers()[i].bias == net.layers()[i].bias);
      CHECK(back.layers()[i].activation == net.layers()[i].activation);
    }
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    CHECK_THROWS_AS(load_mlp(path), IoError);
  }
}
