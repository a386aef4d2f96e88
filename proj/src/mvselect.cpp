#include "mvselect/mvselect.hpp"

#include <algorithm>
#include <limits>

namespace mvsel {

Tensor summarizeFeature(const Tensor& pooled) {
  if (pooled.rows() == 1) return pooled;
  const std::size_t rows = pooled.rows();
  const std::size_t D = pooled.cols();
  Tensor out({1, D});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t d = 0; d < D; ++d) out.data[d] += pooled.data[r * D + d];
  for (auto& v : out.data) v /= static_cast<double>(rows);
  return out;
}

SelectionState buildState(int cameraCount, std::span<const int> chosen, std::span<const Tensor> features,
                          bool allowRepeats) {
  if (chosen.empty()) throw std::invalid_argument("a selection state needs at least one chosen camera");
  if (chosen.size() != features.size()) throw DimensionError("chosen cameras and features are not aligned");
  SelectionState s;
  s.camVector = Tensor({1, static_cast<std::size_t>(cameraCount)});
  for (int a : chosen) {
    if (a < 0 || a >= cameraCount) throw std::out_of_range("camera id " + std::to_string(a) + " out of range");
    double& slot = s.camVector.data[static_cast<std::size_t>(a)];
    if (slot != 0.0 && !allowRepeats) throw std::invalid_argument("camera " + std::to_string(a) + " chosen twice");
    slot += 1.0;
  }
  s.obsVector = summarizeFeature(aggregateMax(features));
  s.chosen.assign(chosen.begin(), chosen.end());
  return s;
}

QNetwork::QNetwork(int cameras_, std::size_t featureDim_, const QNetSpec& spec, std::uint64_t seed)
    : cameras(cameras_),
      featureDim(featureDim_),
      embeddings({static_cast<std::size_t>(cameras_), featureDim_}),
      cameraBranch({{featureDim_, spec.hidden, Activation::Relu}}, seed),
      featureBranch({{featureDim_, spec.hidden, Activation::Relu}}, seed + 1),
      combiner({{spec.hidden, spec.hidden, Activation::Relu},
                {spec.hidden, static_cast<std::size_t>(cameras_), Activation::Linear}},
               seed + 2),
      useCameraBranch(spec.cameraBranch),
      useFeatureBranch(spec.featureBranch) {
  Rng rng(seed + 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : embeddings.data) v = normal(rng);
}

std::size_t QNetwork::macs() const {
  std::size_t m = combiner.macsPerRow();
  if (useCameraBranch) m += static_cast<std::size_t>(cameras) * featureDim + cameraBranch.macsPerRow();
  if (useFeatureBranch) m += featureBranch.macsPerRow();
  return m;
}

QGrad& QGrad::operator+=(const QGrad& other) {
  embeddings += other.embeddings;
  cameraBranch += other.cameraBranch;
  featureBranch += other.featureBranch;
  combiner += other.combiner;
  return *this;
}

QGrad zeroGrad(const QNetwork& net) {
  return {Tensor(net.embeddings.shape), net.cameraBranch.zeroGrad(), net.featureBranch.zeroGrad(),
          net.combiner.zeroGrad()};
}

void appendSlots(std::vector<ParamSlot>& slots, QNetwork& net, const QGrad& grad) {
  if (net.useCameraBranch) {
    slots.push_back({"selector.embeddings", &net.embeddings, &grad.embeddings});
    appendSlots(slots, "selector.camera_branch", net.cameraBranch, grad.cameraBranch);
  }
  if (net.useFeatureBranch) appendSlots(slots, "selector.feature_branch", net.featureBranch, grad.featureBranch);
  appendSlots(slots, "selector.combiner", net.combiner, grad.combiner);
}

namespace {

void checkState(const QNetwork& net, const SelectionState& state) {
  if (state.camVector.size() != static_cast<std::size_t>(net.cameras))
    throw DimensionError("state camera vector has " + std::to_string(state.camVector.size()) + " entries, expected " +
                         std::to_string(net.cameras));
  if (state.obsVector.size() != net.featureDim)
    throw DimensionError("state observation has " + std::to_string(state.obsVector.size()) +
                         " entries, expected " + std::to_string(net.featureDim));
}

}  // namespace

QTrace qForward(const QNetwork& net, const SelectionState& state) {
  checkState(net, state);
  const std::size_t hidden = net.combiner.inWidth();
  QTrace t;
  Tensor combined({1, hidden});
  if (net.useCameraBranch) {
    t.camInput = Tensor({1, net.featureDim});
    for (int c = 0; c < net.cameras; ++c) {
      const double w = state.camVector.data[static_cast<std::size_t>(c)];
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < net.featureDim; ++d)
        t.camInput.data[d] += w * net.embeddings.data[static_cast<std::size_t>(c) * net.featureDim + d];
    }
    t.camera = forwardTrace(net.cameraBranch, t.camInput);
    combined += t.camera.output();
  }
  if (net.useFeatureBranch) {
    t.feature = forwardTrace(net.featureBranch, state.obsVector);
    combined += t.feature.output();
  }
  t.combiner = forwardTrace(net.combiner, combined);
  return t;
}

Tensor qValues(const QNetwork& net, const SelectionState& state) { return qForward(net, state).values(); }

QBackprop qBackward(const QNetwork& net, const SelectionState& state, const QTrace& trace, const Tensor& valueGrad) {
  QBackprop out{zeroGrad(net), Tensor({1, net.featureDim})};
  Backprop comb = backward(net.combiner, trace.combiner, valueGrad);
  out.grad.combiner = std::move(comb.grad);
  if (net.useCameraBranch) {
    Backprop cam = backward(net.cameraBranch, trace.camera, comb.inputGrad);
    out.grad.cameraBranch = std::move(cam.grad);
    for (int c = 0; c < net.cameras; ++c) {
      const double w = state.camVector.data[static_cast<std::size_t>(c)];
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < net.featureDim; ++d)
        out.grad.embeddings.data[static_cast<std::size_t>(c) * net.featureDim + d] += w * cam.inputGrad.data[d];
    }
  }
  if (net.useFeatureBranch) {
    Backprop feat = backward(net.featureBranch, trace.feature, comb.inputGrad);
    out.grad.featureBranch = std::move(feat.grad);
    out.obsGrad = std::move(feat.inputGrad);
  }
  return out;
}

std::vector<bool> actionMask(const SelectionState& state, const std::vector<bool>& disabled, bool allowRepeats) {
  std::vector<bool> mask(state.camVector.size(), false);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!disabled.empty() && disabled[c]) mask[c] = true;
    if (!allowRepeats && state.camVector.data[c] != 0.0) mask[c] = true;
  }
  return mask;
}

int selectAction(std::span<const double> values, double epsilon, const std::vector<bool>& masked, Rng& rng) {
  if (masked.size() != values.size()) throw DimensionError("action mask does not match the number of cameras");
  std::vector<int> open;
  for (std::size_t c = 0; c < values.size(); ++c)
    if (!masked[c]) open.push_back(static_cast<int>(c));
  if (open.empty()) throw std::invalid_argument("every camera is masked; no action available");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < epsilon) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng);
    return open[k];
  }
  int best = open.front();
  for (int c : open)
    if (values[static_cast<std::size_t>(c)] > values[static_cast<std::size_t>(best)]) best = c;
  return best;
}

int selectAction(const QNetwork& net, const SelectionState& state, double epsilon, const std::vector<bool>& masked,
                 std::uint64_t rngSeed) {
  Rng rng(rngSeed);
  const Tensor q = qValues(net, state);
  return selectAction(q.data, epsilon, masked, rng);
}

double terminalReward(const Tensor& prediction, const Sample& groundTruth, TaskKind mode) {
  if (mode == TaskKind::Classification) {
    const auto best = std::max_element(prediction.data.begin(), prediction.data.end()) - prediction.data.begin();
    return best == groundTruth.label ? 1.0 : 0.0;
  }
  return -bevLoss(prediction, groundTruth.target).loss;
}

bool Trajectory::complete() const {
  return states.size() >= 2 && actions.size() + 1 == states.size() && rewards.size() == actions.size() &&
         qTaken.size() == actions.size() && !prediction.empty();
}

FeatureCache::FeatureCache(const TaskNetwork& net, const Sample& sample, bool keepTraces)
    : net_(&net),
      sample_(&sample),
      keepTraces_(keepTraces),
      features_(sample.views.size()),
      traces_(keepTraces ? sample.views.size() : 0) {}

FeatureCache::FeatureCache(const std::vector<Tensor>& precomputed)
    : precomputed_(&precomputed), features_(precomputed.size()) {}

const Tensor& FeatureCache::get(int view) {
  const auto v = static_cast<std::size_t>(view);
  if (precomputed_) return precomputed_->at(v);
  auto& slot = features_.at(v);
  if (!slot) {
    if (keepTraces_) {
      traces_[v] = forwardTrace(net_->featureNet, sample_->views[v]);
      slot = traces_[v]->output();
    } else {
      slot = extractFeature(*net_, sample_->views[v]);
    }
  }
  return *slot;
}

const ForwardTrace& FeatureCache::trace(int view) {
  if (!keepTraces_) throw StateError("feature cache was built without traces");
  get(view);
  return *traces_.at(static_cast<std::size_t>(view));
}

Trajectory rollout(const QNetwork& qnet, const TaskNetwork& task, const Sample& sample, FeatureCache& features,
                   int initial, const RolloutOptions& options, Rng& rng) {
  const int N = qnet.cameras;
  if (options.glances < 1) throw std::invalid_argument("an episode needs at least one glance");
  if (!options.disabled.empty() && options.disabled[static_cast<std::size_t>(initial)])
    throw std::invalid_argument("initial camera " + std::to_string(initial) + " is disabled");
  Trajectory traj;
  traj.disabled = options.disabled;
  traj.allowRepeats = options.allowRepeats;

  std::vector<int> chosen{initial};
  std::vector<Tensor> chosenFeatures{features.get(initial)};
  traj.states.push_back(buildState(N, chosen, chosenFeatures, options.allowRepeats));
  for (int t = 1; t < options.glances; ++t) {
    const SelectionState& s = traj.states.back();
    const Tensor q = qValues(qnet, s);
    const int a = selectAction(q.data, options.epsilon, actionMask(s, options.disabled, options.allowRepeats), rng);
    traj.actions.push_back(a);
    traj.qTaken.push_back(q.data[static_cast<std::size_t>(a)]);
    chosen.push_back(a);
    chosenFeatures.push_back(features.get(a));
    traj.states.push_back(buildState(N, chosen, chosenFeatures, options.allowRepeats));
    traj.rewards.push_back(0.0);
  }
  traj.prediction = predictFromPooled(task, aggregateMax(chosenFeatures));
  if (!traj.rewards.empty()) traj.rewards.back() = options.rewardScale * terminalReward(traj.prediction, sample, task.kind);
  return traj;
}

std::vector<double> tdTargets(const Trajectory& trajectory, const QNetwork& net, double gamma) {
  if (!trajectory.complete()) throw StateError("TD targets need a complete trajectory");
  const std::size_t steps = trajectory.actions.size();  // T - 1
  std::vector<double> q(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (t + 1 == steps) {
      q[t] = trajectory.rewards[t];
      continue;
    }
    const SelectionState& next = trajectory.states[t + 1];
    const Tensor values = qValues(net, next);
    const auto mask = actionMask(next, trajectory.disabled, trajectory.allowRepeats);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < mask.size(); ++c)
      if (!mask[c]) best = std::max(best, values.data[c]);
    q[t] = trajectory.rewards[t] + gamma * best;
  }
  return q;
}

RlLoss rlLoss(const Trajectory& trajectory, const std::vector<double>& targets, const QNetwork& net) {
  if (targets.size() != trajectory.actions.size()) throw DimensionError("one TD target per action is required");
  RlLoss out{0.0, 0, zeroGrad(net), {}};
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const SelectionState& s = trajectory.states[t];
    const QTrace trace = qForward(net, s);
    const auto a = static_cast<std::size_t>(trajectory.actions[t]);
    const double diff = trace.values().data[a] - targets[t];
    out.loss += diff * diff;
    ++out.terms;
    Tensor dq({1, static_cast<std::size_t>(net.cameras)});
    dq.data[a] = 2.0 * diff;
    QBackprop back = qBackward(net, s, trace, dq);
    out.grad += back.grad;
    out.obsGrads.push_back(std::move(back.obsGrad));
  }
  return out;
}

}  // namespace mvsel
