#pragma once

// Training regimes: task-network pretraining on all enabled views, view
// selector training against a frozen task network, and joint training of both.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvselect/mvselect.hpp"
#include "mvselect/tasknet.hpp"

namespace mvsel {

enum class Regime { TaskOnly, SelectFixed, Joint };

std::string toString(Regime regime);
Regime regimeFromString(const std::string& name);

struct TrainConfig {
  Regime regime = Regime::TaskOnly;
  int epochs = 10;          // task-only pretraining
  int selectorEpochs = 10;  // select-fixed and joint
  int batchSize = 8;
  double taskLr = 1e-3;
  double selectorLr = 1e-3;
  double jointTaskLrFactor = 0.2;
  int glances = 2;  // T
  double gamma = 0.99;
  double epsilonStart = 0.95;
  double epsilonEnd = 0.05;
  std::uint64_t seed = 0;
  bool allowRepeats = false;
  // Route the RL loss gradient through the pooled state into f during joint training.
  bool rlGradToFeatures = true;
  double rewardScale = 1.0;

  // Throws ConfigError on an invalid combination, naming the offending field.
  void validate(int cameras) const;
};

// Linear decay from epsilonStart at episode 0 to epsilonEnd at the last episode.
double epsilonAt(const TrainConfig& config, std::size_t episode, std::size_t totalEpisodes);

// One JSON object per epoch, written out as line-delimited JSON.
using MetricLog = std::vector<nlohmann::json>;

struct TaskTrainResult {
  TaskNetwork net;
  MetricLog log;
};

// Trains f and g on every enabled view of each instance.
TaskTrainResult trainTaskNetwork(const Dataset& train, TaskNetwork init, const TrainConfig& config);

// Task-loss-only training on T distinct views per instance: a uniform initial
// view followed by T-1 uniformly random picks, consuming the RNG exactly as a
// joint-training episode with epsilon = 1 does.
TaskTrainResult trainTaskOnRandomViews(const Dataset& train, TaskNetwork init, const TrainConfig& config);

struct SelectorTrainResult {
  QNetwork net;
  MetricLog log;
};

// The task network is only read; its features are computed once up front.
SelectorTrainResult trainSelectorFixed(const Dataset& train, const TaskNetwork& task, QNetwork init,
                                       const TrainConfig& config);

struct JointStats {
  std::size_t iterations = 0;
  std::size_t rlTerms = 0;
  std::size_t taskTerms = 0;
};

struct JointTrainResult {
  TaskNetwork task;
  QNetwork selector;
  MetricLog log;
  JointStats stats;
};

JointTrainResult jointTrain(const Dataset& train, TaskNetwork task, QNetwork selector, const TrainConfig& config);

}  // namespace mvsel
