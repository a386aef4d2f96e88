#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gradient_cases.hpp"
#include "mvselect/numcore.hpp"
#include "support.hpp"

using namespace mvsel;

TEST_CASE("tensor shape must match data length") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
}

TEST_CASE("identity layer maps its input to itself") {
  DenseLayer l;
  l.weight = Tensor({2, 2}, {1, 0, 0, 1});
  l.bias = Tensor({1, 2});
  DenseNet net(std::vector<DenseLayer>{l});
  const Tensor x = Tensor::row({0.25, -3.0});
  CHECK(forward(net, x) == x);
}

TEST_CASE("zero-weight layer returns its bias") {
  DenseLayer l;
  l.weight = Tensor({3, 4});
  l.bias = Tensor({1, 3}, {1, 2, 3});
  DenseNet net(std::vector<DenseLayer>{l});
  CHECK(forward(net, Tensor::row({5, -1, 2, 7})).data == std::vector<double>{1, 2, 3});
}

TEST_CASE("forward matches a naive matrix product chain") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DenseNet net({{6, 8, Activation::Tanh}, {8, 4, Activation::Relu}, {4, 3, Activation::Sigmoid}}, seed);
    for (auto& l : net.layers()) oracle::fillUniform(l.bias, rng);
    Tensor x({5, 6});
    oracle::fillUniform(x, rng);
    const Tensor a = forward(net, x);
    const Tensor b = oracle::forward(net, x);
    REQUIRE(a.shape == b.shape);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("input width mismatch is a dimension error") {
  DenseNet net({{3, 2, Activation::Linear}}, 1);
  CHECK_THROWS_AS(forward(net, Tensor({1, 4})), DimensionError);
  CHECK_THROWS_AS(DenseNet({{3, 2, Activation::Linear}, {3, 1, Activation::Linear}}, 1), DimensionError);
}

TEST_CASE("parameter count is a function of the layer spec") {
  const std::vector<LayerSpec> spec{{4, 5, Activation::Relu}, {5, 2, Activation::Linear}};
  CHECK(parameterCount(spec) == 4 * 5 + 5 + 5 * 2 + 2);
  CHECK(DenseNet(spec, 1).parameterCount() == DenseNet(spec, 99).parameterCount());
}

TEST_CASE("initialization stays within the fan-in bound and is seeded") {
  DenseNet a({{16, 8, Activation::Relu}}, 3), b({{16, 8, Activation::Relu}}, 3), c({{16, 8, Activation::Relu}}, 4);
  const double bound = std::sqrt(1.0 / 16);
  for (double w : a.layers()[0].weight.data) CHECK(std::abs(w) <= bound);
  for (double v : a.layers()[0].bias.data) CHECK(v == 0.0);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("backward of y = Wx with loss sum(y) gives outer(1, x)") {
  DenseNet net({{3, 2, Activation::Linear}}, 5);
  const Tensor x = Tensor::row({0.5, -1.0, 2.0});
  const Backprop bp = backward(net, forwardTrace(net, x), Tensor({1, 2}, 1.0));
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i) CHECK(bp.grad.weight[0](o, i) == x.data[i]);
  CHECK(bp.grad.bias[0].data == std::vector<double>{1.0, 1.0});
}

TEST_CASE("zero loss gradient yields zero parameter gradients") {
  DenseNet net({{3, 4, Activation::Tanh}, {4, 2, Activation::Sigmoid}}, 2);
  const Tensor x = Tensor::row({0.1, 0.2, 0.3});
  const Backprop bp = backward(net, forwardTrace(net, x), Tensor({1, 2}));
  for (const auto& w : bp.grad.weight)
    for (double v : w.data) CHECK(v == 0.0);
  for (double v : bp.inputGrad.data) CHECK(v == 0.0);
}

TEST_CASE("backward without a forward pass is a state error") {
  DenseNet net({{3, 2, Activation::Linear}}, 1);
  CHECK_THROWS_AS(backward(net, ForwardTrace{}, Tensor({1, 2})), StateError);
}

TEST_CASE("layer gradients agree with central differences") {
  for (Activation act : {Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CAPTURE(toString(act));
      CAPTURE(seed);
      CHECK(gradcheck::layerCase(act, seed) < gradcheck::kTolerance);
    }
}

TEST_CASE("cross-entropy values") {
  const LossResult uniform = crossEntropyLoss(Tensor({1, 5}, 0.3), 2);
  CHECK(uniform.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Tensor saturated({1, 3}, -1e6);
  saturated.data[1] = 1e6;
  CHECK(crossEntropyLoss(saturated, 1).loss < 1e-6);
  // -log softmax by hand: label 0 gives ln(1 + e), label 1 gives ln(1 + e) - 1.
  CHECK(crossEntropyLoss(Tensor::row({1.0, 2.0}), 0).loss == doctest::Approx(std::log(1 + std::exp(1.0))));
  CHECK(crossEntropyLoss(Tensor::row({1.0, 2.0}), 1).loss == doctest::Approx(std::log(1 + std::exp(1.0)) - 1.0));
  CHECK_THROWS(crossEntropyLoss(Tensor::row({1.0, 2.0}), 2));
  CHECK_THROWS(crossEntropyLoss(Tensor::row({1.0, 2.0}), -1));
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  const Tensor logits = Tensor::row({0.2, -1.0, 3.0});
  const LossResult r = crossEntropyLoss(logits, 0);
  double z = 0.0;
  for (double v : logits.data) z += std::exp(v);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(r.grad.data[i] == doctest::Approx(std::exp(logits.data[i]) / z - (i == 0 ? 1.0 : 0.0)).epsilon(1e-12));
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(gradcheck::crossEntropyCase(seed) < gradcheck::kTolerance);
}

TEST_CASE("BEV loss is the mean squared error") {
  Tensor heat({4, 4}), target({4, 4});
  target.data[1] = target.data[5] = target.data[9] = 1.0;
  CHECK(bevLoss(heat, target).loss == doctest::Approx(3.0 / 16.0).epsilon(1e-15));
  CHECK(bevLoss(target, target).loss == 0.0);
  CHECK_THROWS_AS(bevLoss(Tensor({2, 2}), Tensor({4, 1})), DimensionError);

  Rng rng(4);
  oracle::fillUniform(heat, rng, 0, 1);
  oracle::fillUniform(target, rng, 0, 1);
  double naive = 0.0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) naive += std::pow(heat(r, c) - target(r, c), 2);
  CHECK(bevLoss(heat, target).loss == doctest::Approx(naive / 16.0).epsilon(1e-12));
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(gradcheck::bevCase(seed) < gradcheck::kTolerance);
}

TEST_CASE("losses are non-negative") {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    Tensor logits({1, 4}), heat({6, 1}), target({6, 1});
    oracle::fillUniform(logits, rng, -5, 5);
    oracle::fillUniform(heat, rng, 0, 1);
    oracle::fillUniform(target, rng, 0, 1);
    CHECK(crossEntropyLoss(logits, i % 4).loss >= 0.0);
    CHECK(bevLoss(heat, target).loss >= 0.0);
  }
}

TEST_CASE("Adam leaves parameters alone under zero gradients") {
  Tensor p({1, 3}, {1.0, -2.0, 0.5});
  const Tensor keep = p;
  Tensor g({1, 3});
  std::vector<ParamSlot> slots{{"p", &p, &g}};
  OptimizerState state(0.1);
  for (int i = 0; i < 5; ++i) optimizerStep(slots, state);
  CHECK(p == keep);
  CHECK(state.stepCount == 5);
  CHECK(state.firstMoment[0].shape == p.shape);
  CHECK(state.secondMoment[0].shape == p.shape);
}

TEST_CASE("Adam single step matches a hand-executed update") {
  Tensor p({1, 1}, {0.3});
  Tensor g({1, 1}, {1.0});
  std::vector<ParamSlot> slots{{"p", &p, &g}};
  OptimizerState state(0.01);
  optimizerStep(slots, state);
  const double m = 0.1 * 1.0, v = 0.001 * 1.0;
  const double mHat = m / (1 - 0.9), vHat = v / (1 - 0.999);
  CHECK(p.data[0] == doctest::Approx(0.3 - 0.01 * mHat / (std::sqrt(vHat) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("Adam descends under a constant positive gradient") {
  Tensor p({1, 1}, {2.0});
  Tensor g({1, 1}, {0.7});
  std::vector<ParamSlot> slots{{"p", &p, &g}};
  OptimizerState state(0.05);
  double prev = p.data[0];
  for (int i = 0; i < 50; ++i) {
    optimizerStep(slots, state);
    CHECK(p.data[0] < prev);
    prev = p.data[0];
  }
}

TEST_CASE("non-finite gradients are rejected by name") {
  Tensor p({1, 2}, {1.0, 1.0});
  Tensor g({1, 2}, {0.0, std::nan("")});
  std::vector<ParamSlot> slots{{"head.layer0.weight", &p, &g}};
  OptimizerState state(0.1);
  try {
    optimizerStep(slots, state);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("head.layer0.weight") != std::string::npos);
  }
  CHECK(p.data == std::vector<double>{1.0, 1.0});
}

TEST_CASE("library gradient checker agrees with the independent one") {
  std::vector<double> x{0.3, -1.2, 2.0};
  auto f = [&] { return x[0] * x[0] * x[1] + std::sin(x[2]); };
  const auto lib = numericGradient(f, x);
  std::vector<double*> ptrs{&x[0], &x[1], &x[2]};
  const auto ref = oracle::centralDifference(f, ptrs);
  CHECK(maxRelativeError(lib, ref) < 1e-9);
  CHECK(lib[0] == doctest::Approx(2 * 0.3 * -1.2).epsilon(1e-8));
}

TEST_CASE("forward and backward are bit-deterministic") {
  DenseNet net({{5, 7, Activation::Tanh}, {7, 2, Activation::Linear}}, 12);
  Rng rng(1);
  Tensor x({4, 5});
  oracle::fillUniform(x, rng);
  const Tensor g({4, 2}, 0.5);
  const auto a = backward(net, forwardTrace(net, x), g);
  const auto b = backward(net, forwardTrace(net, x), g);
  CHECK(a.grad.weight == b.grad.weight);
  CHECK(a.inputGrad == b.inputGrad);
}
