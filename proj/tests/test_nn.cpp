#include "gradcheck.hpp"

#include <doctest.h>

using namespace grace;
using namespace grace::nn;

namespace {

Layer<double> layer(Matrix<double> w, Vector<double> b, Activation a) { return {std::move(w), std::move(b), a}; }

}  // namespace

TEST_CASE("forward") {
  SUBCASE("zero network with sigmoid output") {
    const Mlp<double> net({layer(Matrix<double>::Zero(3, 2), Vector<double>::Zero(3), Activation::relu),
                           layer(Matrix<double>::Zero(1, 3), Vector<double>::Zero(1), Activation::sigmoid)});
    Matrix<double> x(2, 3);
    x << 1, -4, 7, 2, 0.5, -9;
    CHECK((forward(net, x).array() == 0.5).all());
  }
  SUBCASE("identity linear layer") {
    const Mlp<double> net({layer(Matrix<double>::Identity(4, 4), Vector<double>::Zero(4), Activation::linear)});
    const Matrix<double> x = Matrix<double>::Random(4, 5);
    CHECK(forward(net, x) == x);
  }
  SUBCASE("hand-set 2-2-1 network") {
    Matrix<double> w1(2, 2), w2(1, 2);
    w1 << 0.5, -1.0, -2.0, 0.25;
    w2 << 1.5, -0.75;
    Vector<double> b1(2), b2(1);
    b1 << 0.1, 0.3;
    b2 << -0.2;
    const Mlp<double> net({layer(w1, b1, Activation::relu), layer(w2, b2, Activation::sigmoid)});
    Matrix<double> x(2, 1);
    x << 1, 0;
    // h = relu(0.5 + 0.1, -2 + 0.3) = (0.6, 0); out = sigmoid(1.5 * 0.6 - 0.2).
    const double expected = 1.0 / (1.0 + std::exp(-0.7));
    CHECK(std::abs(forward(net, x)(0, 0) - expected) < 1e-12);
  }
  SUBCASE("shape checks") {
    const Mlp<double> net({layer(Matrix<double>::Zero(3, 2), Vector<double>::Zero(3), Activation::relu)});
    CHECK_THROWS_AS(forward(net, Matrix<double>::Zero(3, 1).eval()), ShapeMismatch);
    CHECK_THROWS_AS(Mlp<double>({layer(Matrix<double>::Zero(3, 2), Vector<double>::Zero(2), Activation::relu)}),
                    ShapeMismatch);
    CHECK_THROWS_AS(Mlp<double>({layer(Matrix<double>::Zero(3, 2), Vector<double>::Zero(3), Activation::relu),
                                 layer(Matrix<double>::Zero(1, 2), Vector<double>::Zero(1), Activation::relu)}),
                    ShapeMismatch);
  }
}

TEST_CASE("backward") {
  SUBCASE("linear layer with MSE on one sample") {
    Matrix<double> w(2, 3);
    w << 0.2, -0.1, 0.4, 0.3, 0.7, -0.5;
    const Mlp<double> net({layer(w, Vector<double>::Zero(2), Activation::linear)});
    Matrix<double> x(3, 1), y(2, 1);
    x << 1.0, 2.0, -1.0;
    y << 0.5, -0.5;
    ForwardCache<double> cache;
    const Matrix<double> out = forward(net, x, cache);
    const auto loss = mse_loss<double>(out, y);
    const auto g = backward(net, cache, loss.grad);
    // d/dW of mean((Wx - y)^2) over two outputs = (yhat - y) x^T.
    const Matrix<double> expected = (out - y) * x.transpose();
    CHECK((g.weight[0] - expected).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((g.bias[0] - (out - y)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero upstream gradient") {
    const int dims[] = {3, 5, 2};
    const Activation acts[] = {Activation::relu, Activation::sigmoid};
    const auto net = Mlp<double>::glorot(dims, acts, 1);
    ForwardCache<double> cache;
    forward(net, Matrix<double>::Random(3, 4).eval(), cache);
    const auto g = backward(net, cache, Matrix<double>::Zero(2, 4).eval());
    for (const auto& w : g.weight) CHECK(w.isZero(0.0));
    for (const auto& b : g.bias) CHECK(b.isZero(0.0));
    CHECK_THROWS_AS(backward(net, cache, Matrix<double>::Zero(3, 4).eval()), ShapeMismatch);
  }
  SUBCASE("finite differences on the model architectures") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto e = testing::check_architectures(seed);
      CHECK(e.encoder < 1e-4);
      CHECK(e.decoder < 1e-4);
      CHECK(e.classifier < 1e-4);
    }
  }
}

TEST_CASE("losses") {
  SUBCASE("contrastive") {
    Matrix<double> z(2, 2);
    z << 0.3, 0.3, -0.2, -0.2;
    const int same[] = {1, 1}, diff[] = {1, 2};
    CHECK(contrastive_loss<double>(z, same, 1.0).loss == 0.0);
    z << 0, 3, 0, 0;
    CHECK(contrastive_loss<double>(z, diff, 1.0).loss == 0.0);
    CHECK(contrastive_loss<double>(z, diff, 1.0).grad.isZero(0.0));
    z << 0, 1, 0, 0;
    const auto r = contrastive_loss<double>(z, diff, 2.0);
    CHECK(r.loss == doctest::Approx(1.0));
    // d/dz1 of (2 - |z1 - z2|)^2 at z1 = 0, z2 = (1, 0).
    CHECK(r.grad(0, 0) == doctest::Approx(2.0));
    CHECK(r.grad(0, 1) == doctest::Approx(-2.0));
  }
  SUBCASE("bce matches the probability form") {
    Matrix<double> logits(1, 4), y(1, 4);
    logits << -3, -0.5, 0.7, 4;
    y << 0, 1, 1, 0;
    const Matrix<double> p = (1.0 + (-logits.array()).exp()).inverse().matrix();
    CHECK(bce_with_logits<double>(logits, y).loss == doctest::Approx(bce_from_probabilities<double>(p, y)).epsilon(1e-12));
    CHECK(((bce_with_logits<double>(logits, y).grad - (p - y) / 4.0).cwiseAbs().maxCoeff()) < 1e-15);
  }
}

TEST_CASE("adam") {
  const int dims[] = {2, 3, 1};
  const Activation acts[] = {Activation::relu, Activation::linear};
  auto net = Mlp<double>::glorot(dims, acts, 3);
  auto state = AdamState<double>::for_model(net, 0.01);
  Gradients<double> g;
  for (const auto& L : net.layers()) {
    g.weight.push_back(Matrix<double>::Zero(L.weight.rows(), L.weight.cols()));
    g.bias.push_back(Vector<double>::Zero(L.bias.size()));
  }
  const auto before = net;
  adam_step(net, g, state);
  CHECK(state.step == 1);
  for (std::size_t l = 0; l < 2; ++l) CHECK((net.layers()[l].weight - before.layers()[l].weight).cwiseAbs().maxCoeff() <= 1e-15);

  // One step from fresh moments: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  state = AdamState<double>::for_model(net, 0.01);
  for (auto& w : g.weight) w.setConstant(0.3);
  for (auto& b : g.bias) b.setConstant(-2.0);
  const auto start = net;
  adam_step(net, g, state);
  const double w_step = 0.01 * 0.3 / (0.3 + 1e-8), b_step = -0.01 * 2.0 / (2.0 + 1e-8);
  CHECK(((start.layers()[0].weight - net.layers()[0].weight).array() - w_step).abs().maxCoeff() < 1e-15);
  CHECK(((start.layers()[1].bias - net.layers()[1].bias).array() - b_step).abs().maxCoeff() < 1e-15);

  g.weight[0](0, 0) = std::nan("");
  const auto frozen = net;
  CHECK_THROWS_AS(adam_step(net, g, state), NonFiniteGradient);
  CHECK(net.layers()[0].weight == frozen.layers()[0].weight);
  g.weight.pop_back();
  CHECK_THROWS_AS(adam_step(net, g, state), ShapeMismatch);
}

TEST_CASE("training a separable toy problem") {
  Rng rng(7);
  Matrix<double> x(2, 200), y(1, 200);
  for (Eigen::Index i = 0; i < 200; ++i) {
    x(0, i) = rng.uniform(-1, 1);
    x(1, i) = rng.uniform(-1, 1);
    y(0, i) = x(0, i) + 0.5 * x(1, i) > 0.1 ? 1.0 : 0.0;
  }
  const int dims[] = {2, 16, 1};
  const Activation acts[] = {Activation::relu, Activation::sigmoid};
  auto train = [&] {
    auto net = Mlp<double>::glorot(dims, acts, 11);
    auto state = AdamState<double>::for_model(net, 0.05);
    double loss = 0.0;
    for (int step = 0; step < 200; ++step) {
      ForwardCache<double> cache;
      forward(net, x, cache);
      const auto l = bce_with_logits<double>(cache.pre.back(), y);
      loss = l.loss;
      adam_step(net, backward_from_logits(net, cache, l.grad), state);
    }
    return std::pair{net, loss};
  };
  const auto [a, loss] = train();
  ForwardCache<double> cache;
  forward(a, x, cache);
  CHECK(bce_with_logits<double>(cache.pre.back(), y).loss < 0.1);
  const auto [b, loss_b] = train();
  for (std::size_t l = 0; l < 2; ++l) CHECK(a.layers()[l].weight == b.layers()[l].weight);
  CHECK(loss == loss_b);
}

TEST_CASE("weight file round trip") {
  const int dims[] = {8, 16, 16, 1};
  const Activation acts[] = {Activation::relu, Activation::relu, Activation::sigmoid};
  const auto net = Mlp<double>::glorot(dims, acts, 5);
  const auto back = mlp_from_json(nlohmann::json::parse(to_json(net).dump()));
  REQUIRE(back.layers().size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(back.layers()[l].weight == net.layers()[l].weight);
    CHECK(back.layers()[l].activation == net.layers()[l].activation);
  }
  CHECK(net.parameter_count() == 8 * 16 + 16 + 16 * 16 + 16 + 16 + 1);
  CHECK_THROWS_AS(activation_from_string("tanh"), std::exception);
}
