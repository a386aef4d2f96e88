#pragma once

// Multiview task networks: per-view feature extraction f, element-wise max
// aggregation across views, and an output head g. The classifier maps each
// view vector to a D-vector; the detector applies the same per-cell network to
// every bird's-eye-view cell, so a view feature is an [H*W, D] map and the
// prediction is an [H*W, 1] occupancy heatmap in [0, 1].

#include <cstdint>
#include <span>
#include <vector>

#include "mvselect/envs.hpp"
#include "mvselect/numcore.hpp"

namespace mvsel {

// One labelled multiview example, already rendered.
struct Sample {
  std::uint64_t index = 0;
  std::vector<Tensor> views;
  int label = -1;    // classification
  Tensor occupancy;  // detection, [H, W]
  Tensor target;     // detection, smoothed occupancy [H*W, 1]
};

struct Dataset {
  TaskKind kind = TaskKind::Classification;
  Split split = Split::Train;
  CameraLayout layout;
  int classes = 0;
  int height = 0;
  int width = 0;
  double cellSizeM = 1.0;
  std::vector<Sample> samples;

  int cameraCount() const { return layout.count(); }
};

Dataset materialize(const ClassificationWorld& world, Split split, std::size_t count);
Dataset materialize(const DetectionWorld& world, Split split, std::size_t count);

// Max over occupants of exp(-d^2 / (2 sigma^2)), flattened to [H*W, 1].
Tensor smoothedTarget(const Tensor& occupancy, double sigma = 1.0);

struct TaskNetSpec {
  std::size_t featureDim = 32;
  std::vector<std::size_t> featureHidden{64};
  std::vector<std::size_t> headHidden{};
};

struct TaskNetwork {
  TaskKind kind = TaskKind::Classification;
  DenseNet featureNet;  // f
  DenseNet headNet;     // g
  int classes = 0;
  int height = 1;
  int width = 1;

  static TaskNetwork classifier(std::size_t obsDim, int classes, const TaskNetSpec& spec, std::uint64_t seed);
  static TaskNetwork detector(std::size_t channels, int height, int width, const TaskNetSpec& spec,
                              std::uint64_t seed);

  std::size_t featureDim() const { return featureNet.outWidth(); }
  // Rows per view: 1 for the classifier, H*W for the detector.
  std::size_t rowsPerView() const { return kind == TaskKind::Classification ? 1 : static_cast<std::size_t>(height * width); }

  friend bool operator==(const TaskNetwork&, const TaskNetwork&) = default;
};

struct TaskGrad {
  NetGrad feature;
  NetGrad head;

  TaskGrad& operator+=(const TaskGrad& other);
  void scale(double factor);
};

TaskGrad zeroGrad(const TaskNetwork& net);

Tensor extractFeature(const TaskNetwork& net, const Tensor& observation);
std::vector<Tensor> extractAll(const TaskNetwork& net, const Sample& sample);

// Element-wise maximum plus, per element, the list position of the first
// feature attaining it.
struct MaxPool {
  Tensor value;
  std::vector<std::uint32_t> source;
};

MaxPool maxPool(std::span<const Tensor* const> features);
Tensor aggregateMax(std::span<const Tensor> features);
Tensor aggregateMax(const std::vector<Tensor>& features, std::span<const int> views);

// Adds `grad` (shaped like pool.value) onto viewGrads[pool.source[i]] element-wise.
void routeMaxGrad(const MaxPool& pool, const Tensor& grad, std::vector<Tensor>& viewGrads);

Tensor predictFromPooled(const TaskNetwork& net, const Tensor& pooled);
Tensor predict(const TaskNetwork& net, std::span<const Tensor> features);
Tensor predict(const TaskNetwork& net, const std::vector<Tensor>& features, std::span<const int> views);

// Classification: cross-entropy on the logits. Detection: BEV loss between the
// heatmap and the smoothed target.
LossResult taskLoss(const Tensor& prediction, const Sample& groundTruth, TaskKind mode);

struct TaskPass {
  double loss = 0.0;
  Tensor prediction;
  TaskGrad grad;
};

// Full forward/backward through f, max pooling and g on the given views.
// Gradients reach f through the per-element winning view (ties: lowest camera id).
TaskPass taskForwardBackward(const TaskNetwork& net, const Sample& sample, std::span<const int> views);

}  // namespace mvsel
