#include "mvselect/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mvsel {

namespace {

std::size_t shapeProduct(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::Linear:
      return x;
    case Activation::Relu:
      return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::Tanh:
      return std::tanh(x);
  }
  return x;
}

// Derivative expressed through the activation output y.
double activateDerivative(Activation act, double y) {
  switch (act) {
    case Activation::Linear:
      return 1.0;
    case Activation::Relu:
      return y > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid:
      return y * (1.0 - y);
    case Activation::Tanh:
      return 1.0 - y * y;
  }
  return 1.0;
}

void requireFinite(const Tensor& t, const char* what) {
  if (!t.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(shapeProduct(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shapeProduct(shape) != data.size())
    throw DimensionError("shape " + shapeString(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw DimensionError("expected rank-2 tensor, got " + shapeString(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw DimensionError("expected rank-2 tensor, got " + shapeString(shape));
  return shape[1];
}

bool Tensor::allFinite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data.begin(), data.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape != other.shape)
    throw DimensionError("cannot add " + shapeString(other.shape) + " to " + shapeString(shape));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
  return *this;
}

std::string shapeString(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string toString(Activation act) {
  switch (act) {
    case Activation::Linear:
      return "linear";
    case Activation::Relu:
      return "relu";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Tanh:
      return "tanh";
  }
  return "linear";
}

Activation activationFromString(const std::string& name) {
  if (name == "linear") return Activation::Linear;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

NetGrad& NetGrad::operator+=(const NetGrad& other) {
  if (weight.size() != other.weight.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  return *this;
}

void NetGrad::scale(double factor) {
  for (auto* group : {&weight, &bias})
    for (auto& t : *group)
      for (auto& v : t.data) v *= factor;
}

bool NetGrad::allFinite() const noexcept {
  return std::all_of(weight.begin(), weight.end(), [](const Tensor& t) { return t.allFinite(); }) &&
         std::all_of(bias.begin(), bias.end(), [](const Tensor& t) { return t.allFinite(); });
}

DenseNet::DenseNet(const std::vector<LayerSpec>& specs, std::uint64_t seed) : seed_(seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in == 0 || s.out == 0) throw DimensionError("layer widths must be positive");
    if (i > 0 && specs[i - 1].out != s.in)
      throw DimensionError("layer " + std::to_string(i) + " input width " + std::to_string(s.in) +
                           " does not chain with previous output width " + std::to_string(specs[i - 1].out));
    DenseLayer layer{Tensor({s.out, s.in}), Tensor({1, s.out}), s.act};
    const double bound = std::sqrt(1.0 / static_cast<double>(s.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : layer.weight.data) w = dist(rng);
    layers_.push_back(std::move(layer));
  }
}

DenseNet::DenseNet(std::vector<DenseLayer> layers, std::uint64_t seed) : layers_(std::move(layers)), seed_(seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.shape != std::vector<std::size_t>{1, l.out()})
      throw DimensionError("layer " + std::to_string(i) + " bias shape " + shapeString(l.bias.shape));
    if (i > 0 && layers_[i - 1].out() != l.in())
      throw DimensionError("layer " + std::to_string(i) + " does not chain with its predecessor");
  }
}

std::vector<LayerSpec> DenseNet::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back({l.in(), l.out(), l.act});
  return out;
}

std::size_t DenseNet::inWidth() const { return layers_.empty() ? 0 : layers_.front().in(); }
std::size_t DenseNet::outWidth() const { return layers_.empty() ? 0 : layers_.back().out(); }
std::size_t DenseNet::parameterCount() const { return mvsel::parameterCount(specs()); }

std::size_t DenseNet::macsPerRow() const {
  std::size_t macs = 0;
  for (const auto& l : layers_) macs += l.in() * l.out();
  return macs;
}

NetGrad DenseNet::zeroGrad() const {
  NetGrad g;
  for (const auto& l : layers_) {
    g.weight.emplace_back(l.weight.shape);
    g.bias.emplace_back(l.bias.shape);
  }
  return g;
}

void DenseNet::zeroParameters() {
  for (auto& l : layers_) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
}

std::size_t parameterCount(const std::vector<LayerSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.in * s.out + s.out;
  return n;
}

const Tensor& ForwardTrace::output() const {
  if (!valid()) throw StateError("forward trace is empty");
  return outputs.back();
}

namespace {

Tensor applyLayer(const DenseLayer& layer, const Tensor& x) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in();
  const std::size_t out = layer.out();
  Tensor y({batch, out});
  const double* w = layer.weight.data.data();
  const double* b = layer.bias.data.data();
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = x.data.data() + r * in;
    double* yr = y.data.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
      yr[o] = activate(layer.act, acc);
    }
  }
  return y;
}

void checkInput(const DenseNet& net, const Tensor& input) {
  if (net.layers().empty()) throw DimensionError("network has no layers");
  if (input.shape.size() != 2 || input.cols() != net.inWidth())
    throw DimensionError("input shape " + shapeString(input.shape) + " does not match network input width " +
                         std::to_string(net.inWidth()));
}

}  // namespace

Tensor forward(const DenseNet& net, const Tensor& input) {
  checkInput(net, input);
  Tensor x = input;
  for (const auto& layer : net.layers()) x = applyLayer(layer, x);
  requireFinite(x, "forward output");
  return x;
}

ForwardTrace forwardTrace(const DenseNet& net, const Tensor& input) {
  checkInput(net, input);
  ForwardTrace trace;
  Tensor x = input;
  for (const auto& layer : net.layers()) {
    trace.inputs.push_back(x);
    x = applyLayer(layer, x);
    trace.outputs.push_back(x);
  }
  requireFinite(trace.outputs.back(), "forward output");
  return trace;
}

Backprop backward(const DenseNet& net, const ForwardTrace& trace, const Tensor& outputGrad) {
  if (!trace.valid()) throw StateError("backward called without a cached forward pass");
  if (trace.outputs.size() != net.layers().size()) throw StateError("forward trace belongs to a different network");
  if (outputGrad.shape != trace.output().shape)
    throw DimensionError("loss gradient shape " + shapeString(outputGrad.shape) + " does not match output " +
                         shapeString(trace.output().shape));

  Backprop result{net.zeroGrad(), {}};
  Tensor upstream = outputGrad;
  for (std::size_t li = net.layers().size(); li-- > 0;) {
    const auto& layer = net.layers()[li];
    const Tensor& x = trace.inputs[li];
    const Tensor& y = trace.outputs[li];
    const std::size_t batch = x.rows();
    const std::size_t in = layer.in();
    const std::size_t out = layer.out();

    Tensor delta({batch, out});
    for (std::size_t k = 0; k < delta.size(); ++k)
      delta.data[k] = upstream.data[k] * activateDerivative(layer.act, y.data[k]);

    Tensor& dW = result.grad.weight[li];
    Tensor& db = result.grad.bias[li];
    Tensor dx({batch, in});
    const double* w = layer.weight.data.data();
    for (std::size_t r = 0; r < batch; ++r) {
      const double* xr = x.data.data() + r * in;
      const double* dr = delta.data.data() + r * out;
      double* dxr = dx.data.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        db.data[o] += d;
        double* dWo = dW.data.data() + o * in;
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          dWo[i] += d * xr[i];
          dxr[i] += d * wo[i];
        }
      }
    }
    upstream = std::move(dx);
  }
  result.inputGrad = std::move(upstream);
  if (!result.grad.allFinite() || !result.inputGrad.allFinite())
    throw NumericError("non-finite values in backward pass");
  return result;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

LossResult crossEntropyLoss(const Tensor& logits, int label) {
  const std::size_t classes = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  const double m = *std::max_element(logits.data.begin(), logits.data.end());
  double sum = 0.0;
  for (double v : logits.data) sum += std::exp(v - m);
  const double logSumExp = m + std::log(sum);
  LossResult r;
  r.loss = std::max(0.0, logSumExp - logits.data[static_cast<std::size_t>(label)]);
  r.grad = Tensor(logits.shape);
  for (std::size_t c = 0; c < classes; ++c) r.grad.data[c] = std::exp(logits.data[c] - logSumExp);
  r.grad.data[static_cast<std::size_t>(label)] -= 1.0;
  return r;
}

LossResult bevLoss(const Tensor& heatmap, const Tensor& target) {
  if (heatmap.shape != target.shape)
    throw DimensionError("heatmap shape " + shapeString(heatmap.shape) + " does not match target " +
                         shapeString(target.shape));
  if (heatmap.empty()) throw DimensionError("empty heatmap");
  const double n = static_cast<double>(heatmap.size());
  LossResult r;
  r.grad = Tensor(heatmap.shape);
  double sum = 0.0;
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    const double d = heatmap.data[i] - target.data[i];
    sum += d * d;
    r.grad.data[i] = 2.0 * d / n;
  }
  r.loss = sum / n;
  return r;
}

void appendSlots(std::vector<ParamSlot>& slots, const std::string& prefix, DenseNet& net, const NetGrad& grad) {
  if (grad.weight.size() != net.layers().size()) throw DimensionError(prefix + ": gradient layer count mismatch");
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto& layer = net.layers()[i];
    slots.push_back({prefix + ".layer" + std::to_string(i) + ".weight", &layer.weight, &grad.weight[i]});
    slots.push_back({prefix + ".layer" + std::to_string(i) + ".bias", &layer.bias, &grad.bias[i]});
  }
}

void optimizerStep(std::span<const ParamSlot> slots, OptimizerState& state) {
  for (const auto& s : slots) {
    if (s.value->shape != s.grad->shape)
      throw DimensionError(s.name + ": gradient shape " + shapeString(s.grad->shape) + " vs parameter " +
                           shapeString(s.value->shape));
    if (!s.grad->allFinite()) throw NumericError("non-finite gradient for parameter " + s.name);
  }
  if (state.firstMoment.empty()) {
    for (const auto& s : slots) {
      state.firstMoment.emplace_back(s.value->shape);
      state.secondMoment.emplace_back(s.value->shape);
    }
  }
  if (state.firstMoment.size() != slots.size()) throw DimensionError("optimizer state does not match parameter list");
  for (std::size_t k = 0; k < slots.size(); ++k)
    if (state.firstMoment[k].shape != slots[k].value->shape)
      throw DimensionError(slots[k].name + ": optimizer accumulator shape mismatch");

  ++state.stepCount;
  const double t = static_cast<double>(state.stepCount);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& p = slots[k].value->data;
    const auto& g = slots[k].grad->data;
    auto& m = state.firstMoment[k].data;
    auto& v = state.secondMoment[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mHat = m[i] / c1;
      const double vHat = v[i] / c2;
      p[i] -= state.learningRate * mHat / (std::sqrt(vHat) + state.epsilon);
    }
  }
}

std::vector<double> numericGradient(const std::function<double()>& loss, std::span<double> params, double step) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double plus = loss();
    params[i] = saved - step;
    const double minus = loss();
    params[i] = saved;
    g[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

double maxRelativeError(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace mvsel
