#pragma once

// Task metrics, detection matching and analytic compute-cost accounting.

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "mvselect/mvselect.hpp"
#include "mvselect/numcore.hpp"
#include "mvselect/tasknet.hpp"

namespace mvsel {

double classificationAccuracy(std::span<const int> predictions, std::span<const int> labels);

struct Peak {
  int row = 0;
  int col = 0;
  double score = 0.0;
};

// Cells that are >= every 8-neighbour and strictly above `threshold`.
std::vector<Peak> extractPeaks(const Tensor& heatmap, int height, int width, double threshold);

struct DetectionMatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int gt = 0;
  std::vector<double> distances;  // grid units, one per true positive
};

// Greedy nearest-pair-first one-to-one matching; a pair qualifies when its
// distance is strictly below `thresholdCells`.
DetectionMatchResult matchDetections(const std::vector<Peak>& peaks, const Tensor& occupancy, double thresholdCells);

struct DetectionMetrics {
  double moda = 0.0;
  double modp = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Throws std::domain_error when GT == 0. Precision is 0 when nothing was predicted.
DetectionMetrics detectionMetrics(const DetectionMatchResult& match, double thresholdCells);

// Additive per-episode outcome; metrics are computed from summed outcomes.
struct Outcome {
  double episodes = 0.0;
  double correct = 0.0;
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double gt = 0.0;
  double modpSum = 0.0;  // sum over true positives of 1 - dist / threshold
  double loss = 0.0;
  double skippedFrames = 0.0;

  Outcome& operator+=(const Outcome& o);
  Outcome scaled(double factor) const;
};

struct EvalSettings {
  double peakThreshold = 0.4;
  double matchThresholdM = 0.5;
  std::size_t oracleMaxSets = 32;
};

struct MetricBundle {
  TaskKind kind = TaskKind::Classification;
  double accuracy = 0.0;
  double moda = 0.0;
  double modp = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double episodes = 0.0;
  double skippedFrames = 0.0;

  // Accuracy for classification, MODA for detection.
  double primary() const { return kind == TaskKind::Classification ? accuracy : moda; }
};

MetricBundle summarize(const Outcome& total, TaskKind kind);
nlohmann::json toJson(const MetricBundle& m);

double matchThresholdCells(const Dataset& data, const EvalSettings& settings);

// Scores the task network's prediction for one episode.
Outcome scorePrediction(const Tensor& prediction, const Sample& sample, const Dataset& data,
                        const EvalSettings& settings);
// Per-episode contribution to the primary metric used for oracle ranking:
// correctness for classification, -(FP + FN) for detection.
double primaryContribution(const Outcome& o, TaskKind kind);

// Cost model inputs: the layer specs of f and g, rows each is applied to, and
// the selector's per-evaluation cost.
struct CostSpec {
  std::vector<LayerSpec> feature;
  std::vector<LayerSpec> head;
  std::size_t rowsPerView = 1;
  std::size_t selectorMacs = 0;
};

CostSpec costSpec(const TaskNetwork& task, const QNetwork* selector);

struct CostLedger {
  int cameras = 0;
  int glances = 0;
  double featurePerView = 0.0;  // f, one view
  double head = 0.0;            // g
  double selector = 0.0;        // d, one decision
  double total = 0.0;           // T f + g + (T-1) d; the selector is skipped when T = N
  double fullTotal = 0.0;       // N f + g
  double ratio = 0.0;           // total / fullTotal
  std::vector<double> throughput;  // instances per second, optional
};

std::size_t layerMacs(const std::vector<LayerSpec>& specs);
CostLedger costAccount(const CostSpec& spec, int cameras, int glances);
nlohmann::json toJson(const CostLedger& c);

struct Episode {
  std::size_t sample = 0;
  int initial = 0;
  std::vector<int> sequence;  // a_2 .. a_T
  Outcome outcome;
};

// frequency[step][initial][camera]: share of episodes starting at `initial`
// that selected `camera` at glance step + 2. Rows with no episodes stay zero.
struct PolicyFrequency {
  int cameras = 0;
  int steps = 0;
  std::vector<std::vector<std::vector<double>>> frequency;
  // Share of all selections (any step, any initial view) that went to each camera.
  std::vector<double> usage;
};

PolicyFrequency policyFrequency(const std::vector<Episode>& episodes, int cameras);
nlohmann::json toJson(const PolicyFrequency& f);

}  // namespace mvsel
