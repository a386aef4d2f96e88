#pragma once

// Dense tensors and the small fixed-vocabulary neural network substrate used by
// the task networks and the view selector: dense layers, two losses, Adam and a
// central-difference gradient checker.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvselect/errors.hpp"

namespace mvsel {

using Rng = std::mt19937_64;

// Row-major dense array of doubles. Rank-2 tensors are [rows, cols]; a "vector"
// is a [1, n] tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor row(std::vector<double> values);
  static Tensor zerosLike(const Tensor& other) { return Tensor(other.shape); }

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> rowSpan(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> rowSpan(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool allFinite() const noexcept;
  void fill(double value);
  Tensor& operator+=(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shapeString(const std::vector<std::size_t>& shape);

enum class Activation { Linear, Relu, Sigmoid, Tanh };

std::string toString(Activation act);
Activation activationFromString(const std::string& name);

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::Linear;
};

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [1, out]
  Activation act = Activation::Linear;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// One tensor per layer weight and bias, mirroring DenseNet::layers.
struct NetGrad {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;

  NetGrad& operator+=(const NetGrad& other);
  void scale(double factor);
  bool allFinite() const noexcept;
};

// Multilayer perceptron with per-layer activation tags.
class DenseNet {
 public:
  DenseNet() = default;
  // Weights uniform in [-sqrt(1/fanIn), +sqrt(1/fanIn)], biases zero.
  DenseNet(const std::vector<LayerSpec>& specs, std::uint64_t seed);
  explicit DenseNet(std::vector<DenseLayer> layers, std::uint64_t seed = 0);

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<LayerSpec> specs() const;
  std::size_t inWidth() const;
  std::size_t outWidth() const;
  std::size_t parameterCount() const;
  // Multiply-accumulates needed to push one input row through the net.
  std::size_t macsPerRow() const;

  NetGrad zeroGrad() const;
  void zeroParameters();

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

std::size_t parameterCount(const std::vector<LayerSpec>& specs);

// Cached intermediates of one forward pass, required by backward().
struct ForwardTrace {
  std::vector<Tensor> inputs;   // input of each layer
  std::vector<Tensor> outputs;  // post-activation output of each layer

  bool valid() const noexcept { return !outputs.empty(); }
  const Tensor& output() const;
};

struct Backprop {
  NetGrad grad;
  Tensor inputGrad;
};

Tensor forward(const DenseNet& net, const Tensor& input);
ForwardTrace forwardTrace(const DenseNet& net, const Tensor& input);
// `outputGrad` is dLoss/dOutput, same shape as trace.output().
Backprop backward(const DenseNet& net, const ForwardTrace& trace, const Tensor& outputGrad);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dLoss/dInput, same shape as the prediction
};

std::vector<double> softmax(std::span<const double> logits);
LossResult crossEntropyLoss(const Tensor& logits, int label);
// Mean squared error over all cells.
LossResult bevLoss(const Tensor& heatmap, const Tensor& target);

struct ParamSlot {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

void appendSlots(std::vector<ParamSlot>& slots, const std::string& prefix, DenseNet& net, const NetGrad& grad);

struct OptimizerState {
  double learningRate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> firstMoment;
  std::vector<Tensor> secondMoment;
  std::int64_t stepCount = 0;

  explicit OptimizerState(double lr = 1e-3) : learningRate(lr) {}
};

// One Adam update over every slot. Throws NumericError naming the first
// parameter whose gradient is not finite (nothing is modified in that case).
void optimizerStep(std::span<const ParamSlot> slots, OptimizerState& state);

// Central finite differences of `loss` w.r.t. each entry of `params`.
std::vector<double> numericGradient(const std::function<double()>& loss, std::span<double> params,
                                    double step = 1e-5);

// |a - n| / max(|a|, |n|, floor), maximised over entries.
double maxRelativeError(std::span<const double> analytic, std::span<const double> numeric,
                        double floor = 1e-6);

}  // namespace mvsel
