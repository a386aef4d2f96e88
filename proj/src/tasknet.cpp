#include "mvselect/tasknet.hpp"

#include <algorithm>
#include <cmath>

namespace mvsel {

namespace {

std::vector<LayerSpec> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                             Activation hiddenAct, Activation outAct) {
  std::vector<LayerSpec> specs;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    specs.push_back({prev, h, hiddenAct});
    prev = h;
  }
  specs.push_back({prev, out, outAct});
  return specs;
}

std::vector<int> sortedViews(std::span<const int> views) {
  std::vector<int> ids(views.begin(), views.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

Dataset materialize(const ClassificationWorld& world, Split split, std::size_t count) {
  Dataset ds;
  ds.kind = TaskKind::Classification;
  ds.split = split;
  ds.layout = world.layout();
  ds.classes = world.config().classes;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto inst = world.instance(split, i);
    Sample s;
    s.index = i;
    s.views = std::move(inst.views);
    s.label = inst.classId;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset materialize(const DetectionWorld& world, Split split, std::size_t count) {
  Dataset ds;
  ds.kind = TaskKind::Detection;
  ds.split = split;
  ds.layout = world.layout();
  ds.height = world.config().height;
  ds.width = world.config().width;
  ds.cellSizeM = world.config().cellSizeM;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto inst = world.instance(split, i);
    Sample s;
    s.index = i;
    s.views = std::move(inst.views);
    s.target = smoothedTarget(inst.occupancy);
    s.occupancy = std::move(inst.occupancy);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Tensor smoothedTarget(const Tensor& occupancy, double sigma) {
  const std::size_t H = occupancy.rows();
  const std::size_t W = occupancy.cols();
  Tensor target({H * W, 1});
  const int reach = static_cast<int>(std::ceil(4.0 * sigma));
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      if (occupancy(r, c) == 0.0) continue;
      for (int dr = -reach; dr <= reach; ++dr)
        for (int dc = -reach; dc <= reach; ++dc) {
          const long rr = static_cast<long>(r) + dr;
          const long cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
          const double v = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
          double& cell = target.data[static_cast<std::size_t>(rr) * W + static_cast<std::size_t>(cc)];
          cell = std::max(cell, v);
        }
    }
  return target;
}

TaskNetwork TaskNetwork::classifier(std::size_t obsDim, int classes, const TaskNetSpec& spec, std::uint64_t seed) {
  TaskNetwork net;
  net.kind = TaskKind::Classification;
  net.classes = classes;
  net.featureNet = DenseNet(chain(obsDim, spec.featureHidden, spec.featureDim, Activation::Relu, Activation::Relu), seed);
  net.headNet = DenseNet(chain(spec.featureDim, spec.headHidden, static_cast<std::size_t>(classes), Activation::Relu,
                               Activation::Linear),
                         seed + 1);
  return net;
}

TaskNetwork TaskNetwork::detector(std::size_t channels, int height, int width, const TaskNetSpec& spec,
                                  std::uint64_t seed) {
  TaskNetwork net;
  net.kind = TaskKind::Detection;
  net.height = height;
  net.width = width;
  net.featureNet =
      DenseNet(chain(channels, spec.featureHidden, spec.featureDim, Activation::Relu, Activation::Relu), seed);
  net.headNet = DenseNet(chain(spec.featureDim, spec.headHidden, 1, Activation::Relu, Activation::Sigmoid), seed + 1);
  return net;
}

TaskGrad& TaskGrad::operator+=(const TaskGrad& other) {
  feature += other.feature;
  head += other.head;
  return *this;
}

void TaskGrad::scale(double factor) {
  feature.scale(factor);
  head.scale(factor);
}

TaskGrad zeroGrad(const TaskNetwork& net) { return {net.featureNet.zeroGrad(), net.headNet.zeroGrad()}; }

Tensor extractFeature(const TaskNetwork& net, const Tensor& observation) {
  if (observation.shape.size() != 2 || observation.rows() != net.rowsPerView())
    throw DimensionError("observation shape " + shapeString(observation.shape) + " does not match the task network");
  return forward(net.featureNet, observation);
}

std::vector<Tensor> extractAll(const TaskNetwork& net, const Sample& sample) {
  std::vector<Tensor> out;
  out.reserve(sample.views.size());
  for (const auto& v : sample.views) out.push_back(extractFeature(net, v));
  return out;
}

MaxPool maxPool(std::span<const Tensor* const> features) {
  if (features.empty()) throw std::invalid_argument("max pooling needs at least one view");
  MaxPool pool{*features[0], std::vector<std::uint32_t>(features[0]->size(), 0)};
  for (std::size_t k = 1; k < features.size(); ++k) {
    const Tensor& f = *features[k];
    if (f.shape != pool.value.shape)
      throw DimensionError("cannot pool features of shape " + shapeString(f.shape) + " with " +
                           shapeString(pool.value.shape));
    for (std::size_t i = 0; i < f.size(); ++i)
      if (f.data[i] > pool.value.data[i]) {
        pool.value.data[i] = f.data[i];
        pool.source[i] = static_cast<std::uint32_t>(k);
      }
  }
  return pool;
}

Tensor aggregateMax(std::span<const Tensor> features) {
  std::vector<const Tensor*> ptrs;
  for (const auto& f : features) ptrs.push_back(&f);
  return maxPool(ptrs).value;
}

Tensor aggregateMax(const std::vector<Tensor>& features, std::span<const int> views) {
  std::vector<const Tensor*> ptrs;
  for (int v : views) ptrs.push_back(&features.at(static_cast<std::size_t>(v)));
  return maxPool(ptrs).value;
}

void routeMaxGrad(const MaxPool& pool, const Tensor& grad, std::vector<Tensor>& viewGrads) {
  if (grad.shape != pool.value.shape) throw DimensionError("pooled gradient shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) viewGrads.at(pool.source[i]).data[i] += grad.data[i];
}

Tensor predictFromPooled(const TaskNetwork& net, const Tensor& pooled) { return forward(net.headNet, pooled); }

Tensor predict(const TaskNetwork& net, std::span<const Tensor> features) {
  return predictFromPooled(net, aggregateMax(features));
}

Tensor predict(const TaskNetwork& net, const std::vector<Tensor>& features, std::span<const int> views) {
  return predictFromPooled(net, aggregateMax(features, views));
}

LossResult taskLoss(const Tensor& prediction, const Sample& groundTruth, TaskKind mode) {
  if (mode == TaskKind::Classification) {
    if (groundTruth.label < 0) throw std::invalid_argument("classification loss on a sample without a label");
    return crossEntropyLoss(prediction, groundTruth.label);
  }
  if (groundTruth.target.empty()) throw std::invalid_argument("detection loss on a sample without an occupancy target");
  return bevLoss(prediction, groundTruth.target);
}

TaskPass taskForwardBackward(const TaskNetwork& net, const Sample& sample, std::span<const int> views) {
  const std::vector<int> ids = sortedViews(views);
  if (ids.empty()) throw std::invalid_argument("task pass needs at least one view");
  std::vector<ForwardTrace> traces;
  std::vector<const Tensor*> feats;
  traces.reserve(ids.size());
  for (int v : ids) {
    const Tensor& obs = sample.views.at(static_cast<std::size_t>(v));
    if (obs.rows() != net.rowsPerView()) throw DimensionError("observation rows do not match the task network");
    traces.push_back(forwardTrace(net.featureNet, obs));
  }
  for (const auto& t : traces) feats.push_back(&t.output());
  const MaxPool pool = maxPool(feats);
  const ForwardTrace head = forwardTrace(net.headNet, pool.value);
  LossResult loss = taskLoss(head.output(), sample, net.kind);

  TaskPass pass{loss.loss, head.output(), zeroGrad(net)};
  Backprop headBack = backward(net.headNet, head, loss.grad);
  pass.grad.head = std::move(headBack.grad);
  std::vector<Tensor> viewGrads;
  for (const auto* f : feats) viewGrads.emplace_back(f->shape);
  routeMaxGrad(pool, headBack.inputGrad, viewGrads);
  for (std::size_t k = 0; k < traces.size(); ++k) pass.grad.feature += backward(net.featureNet, traces[k], viewGrads[k]).grad;
  return pass;
}

}  // namespace mvsel
