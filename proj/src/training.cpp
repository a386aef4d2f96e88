#include "mvselect/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mvsel {

namespace {

constexpr std::uint64_t kShuffleTag = 11;
constexpr std::uint64_t kEpisodeTag = 12;

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

int drawInitial(const std::vector<int>& active, Rng& rng) {
  return active[std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)];
}

std::vector<bool> disabledMask(const CameraLayout& layout) {
  std::vector<bool> mask(static_cast<std::size_t>(layout.count()));
  for (int c = 0; c < layout.count(); ++c) mask[static_cast<std::size_t>(c)] = !layout.enabled(c);
  return mask;
}

void checkFinite(double loss, const std::string& stage, int epoch, std::uint64_t instance) {
  if (std::isfinite(loss)) return;
  std::ostringstream msg;
  msg << stage << " diverged: non-finite loss at epoch " << epoch << ", instance " << instance;
  throw NumericError(msg.str());
}

std::vector<ParamSlot> taskSlots(TaskNetwork& net, const TaskGrad& grad) {
  std::vector<ParamSlot> slots;
  appendSlots(slots, "task.feature", net.featureNet, grad.feature);
  appendSlots(slots, "task.head", net.headNet, grad.head);
  return slots;
}

void taskStep(TaskNetwork& net, TaskGrad& grad, std::size_t batch, OptimizerState& opt) {
  grad.scale(1.0 / static_cast<double>(batch));
  optimizerStep(taskSlots(net, grad), opt);
  grad = zeroGrad(net);
}

void scaleGrad(QGrad& g, double factor) {
  for (auto& v : g.embeddings.data) v *= factor;
  g.cameraBranch.scale(factor);
  g.featureBranch.scale(factor);
  g.combiner.scale(factor);
}

void selectorStep(QNetwork& net, QGrad& grad, std::size_t batch, OptimizerState& opt) {
  scaleGrad(grad, 1.0 / static_cast<double>(batch));
  std::vector<ParamSlot> slots;
  appendSlots(slots, net, grad);
  optimizerStep(slots, opt);
  grad = zeroGrad(net);
}

std::size_t batchSizeFor(const TrainConfig& config) { return static_cast<std::size_t>(std::max(1, config.batchSize)); }

bool predictedCorrectly(const Tensor& prediction, const Sample& sample, TaskKind kind) {
  return kind == TaskKind::Classification && terminalReward(prediction, sample, kind) == 1.0;
}

}  // namespace

std::string toString(Regime regime) {
  switch (regime) {
    case Regime::TaskOnly: return "task";
    case Regime::SelectFixed: return "select-fixed";
    case Regime::Joint: return "joint";
  }
  return "task";
}

Regime regimeFromString(const std::string& name) {
  if (name == "task" || name == "task-only") return Regime::TaskOnly;
  if (name == "select-fixed") return Regime::SelectFixed;
  if (name == "joint") return Regime::Joint;
  throw ConfigError("train.regime", "unknown regime '" + name + "' (expected task, select-fixed or joint)");
}

void TrainConfig::validate(int cameras) const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be non-negative");
  if (selectorEpochs < 0) throw ConfigError("train.selector_epochs", "must be non-negative");
  if (batchSize < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (!(taskLr > 0)) throw ConfigError("train.task_lr", "must be positive");
  if (!(selectorLr > 0)) throw ConfigError("train.selector_lr", "must be positive");
  if (!(jointTaskLrFactor > 0)) throw ConfigError("train.joint_task_lr_factor", "must be positive");
  if (glances < 1 || glances > cameras)
    throw ConfigError("train.T", "must lie in [1, " + std::to_string(cameras) + "], got " + std::to_string(glances));
  if (gamma < 0 || gamma > 1) throw ConfigError("train.gamma", "must lie in [0, 1]");
  if (epsilonStart < 0 || epsilonStart > 1) throw ConfigError("train.epsilon_start", "must lie in [0, 1]");
  if (epsilonEnd < 0 || epsilonEnd > 1) throw ConfigError("train.epsilon_end", "must lie in [0, 1]");
  if (!(rewardScale > 0)) throw ConfigError("train.reward_scale", "must be positive");
}

double epsilonAt(const TrainConfig& config, std::size_t episode, std::size_t totalEpisodes) {
  if (totalEpisodes <= 1) return config.epsilonStart;
  const double frac = std::min(1.0, static_cast<double>(episode) / static_cast<double>(totalEpisodes - 1));
  return config.epsilonStart + (config.epsilonEnd - config.epsilonStart) * frac;
}

TaskTrainResult trainTaskNetwork(const Dataset& train, TaskNetwork net, const TrainConfig& config) {
  if (train.samples.empty()) throw std::invalid_argument("training split is empty");
  Rng rng(streamSeed(config.seed, kShuffleTag, Split::Train, 0));
  OptimizerState opt(config.taskLr);
  const std::vector<int> views = train.layout.activeCameras();
  const std::size_t batch = batchSizeFor(config);
  TaskTrainResult result;
  TaskGrad grad = zeroGrad(net);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lossSum = 0.0;
    std::size_t correct = 0;
    std::size_t inBatch = 0;
    for (std::size_t i : shuffled(train.samples.size(), rng)) {
      const Sample& s = train.samples[i];
      TaskPass pass = taskForwardBackward(net, s, views);
      checkFinite(pass.loss, "task training", epoch, s.index);
      lossSum += pass.loss;
      correct += predictedCorrectly(pass.prediction, s, net.kind) ? 1 : 0;
      grad += pass.grad;
      if (++inBatch == batch) {
        taskStep(net, grad, inBatch, opt);
        inBatch = 0;
      }
    }
    if (inBatch > 0) taskStep(net, grad, inBatch, opt);
    const double n = static_cast<double>(train.samples.size());
    nlohmann::json rec{{"stage", "task"}, {"epoch", epoch}, {"loss", lossSum / n}};
    if (net.kind == TaskKind::Classification) rec["train_accuracy"] = static_cast<double>(correct) / n;
    result.log.push_back(std::move(rec));
  }
  result.net = std::move(net);
  return result;
}

TaskTrainResult trainTaskOnRandomViews(const Dataset& train, TaskNetwork net, const TrainConfig& config) {
  if (train.samples.empty()) throw std::invalid_argument("training split is empty");
  const int N = train.cameraCount();
  Rng order(streamSeed(config.seed, kShuffleTag, Split::Train, 1));
  Rng rng(streamSeed(config.seed, kEpisodeTag, Split::Train, 1));
  OptimizerState opt(config.taskLr * config.jointTaskLrFactor);
  const std::vector<int> active = train.layout.activeCameras();
  const std::vector<bool> disabled = disabledMask(train.layout);
  const std::size_t batch = batchSizeFor(config);
  TaskTrainResult result;
  TaskGrad grad = zeroGrad(net);
  for (int epoch = 0; epoch < config.selectorEpochs; ++epoch) {
    double lossSum = 0.0;
    std::size_t inBatch = 0;
    for (std::size_t i : shuffled(train.samples.size(), order)) {
      const Sample& s = train.samples[i];
      std::vector<int> chosen{drawInitial(active, rng)};
      const std::vector<double> noValues(static_cast<std::size_t>(N), 0.0);
      for (int t = 1; t < config.glances; ++t) {
        std::vector<bool> mask = disabled;
        if (!config.allowRepeats)
          for (int c : chosen) mask[static_cast<std::size_t>(c)] = true;
        chosen.push_back(selectAction(noValues, 1.0, mask, rng));
      }
      TaskPass pass = taskForwardBackward(net, s, chosen);
      checkFinite(pass.loss, "random-view training", epoch, s.index);
      lossSum += pass.loss;
      grad += pass.grad;
      if (++inBatch == batch) {
        taskStep(net, grad, inBatch, opt);
        inBatch = 0;
      }
    }
    if (inBatch > 0) taskStep(net, grad, inBatch, opt);
    result.log.push_back(
        {{"stage", "random-views"}, {"epoch", epoch}, {"task_loss", lossSum / static_cast<double>(train.samples.size())}});
  }
  result.net = std::move(net);
  return result;
}

SelectorTrainResult trainSelectorFixed(const Dataset& train, const TaskNetwork& task, QNetwork qnet,
                                       const TrainConfig& config) {
  if (train.samples.empty()) throw std::invalid_argument("training split is empty");
  if (config.glances < 2) throw ConfigError("train.T", "selector training needs T >= 2");
  std::vector<std::vector<Tensor>> features;
  features.reserve(train.samples.size());
  for (const auto& s : train.samples) features.push_back(extractAll(task, s));

  Rng order(streamSeed(config.seed, kShuffleTag, Split::Train, 2));
  Rng rng(streamSeed(config.seed, kEpisodeTag, Split::Train, 2));
  OptimizerState opt(config.selectorLr);
  const std::vector<int> active = train.layout.activeCameras();
  RolloutOptions ro;
  ro.glances = config.glances;
  ro.allowRepeats = config.allowRepeats;
  ro.disabled = disabledMask(train.layout);
  ro.rewardScale = config.rewardScale;
  const std::size_t batch = batchSizeFor(config);
  const std::size_t total = train.samples.size() * static_cast<std::size_t>(config.selectorEpochs);
  std::size_t episode = 0;

  SelectorTrainResult result;
  QGrad grad = zeroGrad(qnet);
  for (int epoch = 0; epoch < config.selectorEpochs; ++epoch) {
    double lossSum = 0.0;
    double rewardSum = 0.0;
    std::size_t inBatch = 0;
    for (std::size_t i : shuffled(train.samples.size(), order)) {
      const Sample& s = train.samples[i];
      FeatureCache cache(features[i]);
      ro.epsilon = epsilonAt(config, episode++, total);
      const Trajectory traj = rollout(qnet, task, s, cache, drawInitial(active, rng), ro, rng);
      const RlLoss rl = rlLoss(traj, tdTargets(traj, qnet, config.gamma), qnet);
      checkFinite(rl.loss, "selector training", epoch, s.index);
      lossSum += rl.loss;
      rewardSum += traj.rewards.back();
      grad += rl.grad;
      if (++inBatch == batch) {
        selectorStep(qnet, grad, inBatch, opt);
        inBatch = 0;
      }
    }
    if (inBatch > 0) selectorStep(qnet, grad, inBatch, opt);
    const double n = static_cast<double>(train.samples.size());
    result.log.push_back({{"stage", "select-fixed"},
                          {"epoch", epoch},
                          {"rl_loss", lossSum / n},
                          {"mean_reward", rewardSum / n},
                          {"epsilon", ro.epsilon}});
  }
  result.net = std::move(qnet);
  return result;
}

JointTrainResult jointTrain(const Dataset& train, TaskNetwork task, QNetwork qnet, const TrainConfig& config) {
  if (train.samples.empty()) throw std::invalid_argument("training split is empty");
  if (config.glances < 2) throw ConfigError("train.T", "joint training needs T >= 2");
  Rng order(streamSeed(config.seed, kShuffleTag, Split::Train, 1));
  Rng rng(streamSeed(config.seed, kEpisodeTag, Split::Train, 1));
  OptimizerState taskOpt(config.taskLr * config.jointTaskLrFactor);
  OptimizerState qOpt(config.selectorLr);
  const std::vector<int> active = train.layout.activeCameras();
  RolloutOptions ro;
  ro.glances = config.glances;
  ro.allowRepeats = config.allowRepeats;
  ro.disabled = disabledMask(train.layout);
  ro.rewardScale = config.rewardScale;
  const std::size_t batch = batchSizeFor(config);
  const std::size_t total = train.samples.size() * static_cast<std::size_t>(config.selectorEpochs);
  std::size_t episode = 0;

  JointTrainResult result;
  TaskGrad taskGrad = zeroGrad(task);
  QGrad qGrad = zeroGrad(qnet);
  for (int epoch = 0; epoch < config.selectorEpochs; ++epoch) {
    double rlSum = 0.0;
    double taskSum = 0.0;
    double rewardSum = 0.0;
    std::size_t inBatch = 0;
    for (std::size_t i : shuffled(train.samples.size(), order)) {
      const Sample& s = train.samples[i];
      FeatureCache cache(task, s, true);
      ro.epsilon = epsilonAt(config, episode++, total);
      const Trajectory traj = rollout(qnet, task, s, cache, drawInitial(active, rng), ro, rng);
      const RlLoss rl = rlLoss(traj, tdTargets(traj, qnet, config.gamma), qnet);
      checkFinite(rl.loss, "joint training (RL)", epoch, s.index);
      rlSum += rl.loss;
      rewardSum += traj.rewards.back();
      qGrad += rl.grad;
      result.stats.rlTerms += static_cast<std::size_t>(rl.terms);

      // Task loss on the chosen views, pooled in ascending camera order.
      const std::vector<int>& chosen = traj.chosen();
      std::vector<int> ids(chosen.begin(), chosen.end());
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      std::vector<const Tensor*> feats;
      for (int v : ids) feats.push_back(&cache.trace(v).output());
      const MaxPool pool = maxPool(feats);
      const ForwardTrace head = forwardTrace(task.headNet, pool.value);
      const LossResult loss = taskLoss(head.output(), s, task.kind);
      checkFinite(loss.loss, "joint training (task)", epoch, s.index);
      taskSum += loss.loss;
      ++result.stats.taskTerms;
      Backprop headBack = backward(task.headNet, head, loss.grad);
      TaskGrad instGrad = zeroGrad(task);
      instGrad.head = std::move(headBack.grad);
      std::vector<Tensor> viewGrads;
      for (const auto* f : feats) viewGrads.emplace_back(f->shape);
      routeMaxGrad(pool, headBack.inputGrad, viewGrads);

      if (config.rlGradToFeatures) {
        // d obs_t / d f: mean over cells, then through the running max over a_1..a_t.
        for (std::size_t t = 0; t < rl.obsGrads.size(); ++t) {
          std::vector<const Tensor*> prefix;
          std::vector<std::size_t> prefixSlot;
          for (std::size_t k = 0; k <= t; ++k) {
            const int v = chosen[k];
            prefix.push_back(&cache.trace(v).output());
            prefixSlot.push_back(static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), v) - ids.begin()));
          }
          const MaxPool prefixPool = maxPool(prefix);
          const Tensor& g = rl.obsGrads[t];
          const std::size_t D = g.size();
          const std::size_t rows = prefixPool.value.rows();
          for (std::size_t e = 0; e < prefixPool.value.size(); ++e) {
            const double share = g.data[e % D] / static_cast<double>(rows);
            viewGrads[prefixSlot[prefixPool.source[e]]].data[e] += share;
          }
        }
      }
      for (std::size_t k = 0; k < ids.size(); ++k)
        instGrad.feature += backward(task.featureNet, cache.trace(ids[k]), viewGrads[k]).grad;
      taskGrad += instGrad;

      ++result.stats.iterations;
      if (++inBatch == batch) {
        taskStep(task, taskGrad, inBatch, taskOpt);
        selectorStep(qnet, qGrad, inBatch, qOpt);
        inBatch = 0;
      }
    }
    if (inBatch > 0) {
      taskStep(task, taskGrad, inBatch, taskOpt);
      selectorStep(qnet, qGrad, inBatch, qOpt);
    }
    const double n = static_cast<double>(train.samples.size());
    result.log.push_back({{"stage", "joint"},
                          {"epoch", epoch},
                          {"rl_loss", rlSum / n},
                          {"task_loss", taskSum / n},
                          {"mean_reward", rewardSum / n},
                          {"epsilon", ro.epsilon}});
  }
  result.task = std::move(task);
  result.selector = std::move(qnet);
  return result;
}

}  // namespace mvsel
