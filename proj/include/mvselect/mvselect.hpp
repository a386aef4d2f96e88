#pragma once

// The view-selection agent. A selection state pairs the multi-hot vector of
// chosen cameras with the running element-wise max of their features; the
// two-branch Q-network scores every camera as the next view to query.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvselect/numcore.hpp"
#include "mvselect/tasknet.hpp"

namespace mvsel {

struct SelectionState {
  Tensor camVector;         // [1, N], count of times each camera was chosen
  Tensor obsVector;         // [1, D]
  std::vector<int> chosen;  // a_1 .. a_t in selection order

  friend bool operator==(const SelectionState&, const SelectionState&) = default;
};

// Reduces a pooled feature to the D-vector used as state: identity for [1, D]
// classifier features, spatial mean over cells for [H*W, D] detector maps.
Tensor summarizeFeature(const Tensor& pooled);

// `features` is aligned with `chosen`. Duplicate ids are rejected unless
// `allowRepeats` is set.
SelectionState buildState(int cameraCount, std::span<const int> chosen, std::span<const Tensor> features,
                          bool allowRepeats = false);

struct QNetSpec {
  std::size_t hidden = 64;
  bool cameraBranch = true;
  bool featureBranch = true;
};

struct QNetwork {
  int cameras = 0;
  std::size_t featureDim = 0;
  Tensor embeddings;      // [N, D] learnable camera embeddings
  DenseNet cameraBranch;  // D -> hidden
  DenseNet featureBranch; // D -> hidden
  DenseNet combiner;      // hidden -> N action values
  bool useCameraBranch = true;
  bool useFeatureBranch = true;

  QNetwork() = default;
  QNetwork(int cameras, std::size_t featureDim, const QNetSpec& spec, std::uint64_t seed);

  // Multiply-accumulates of one Q evaluation.
  std::size_t macs() const;

  friend bool operator==(const QNetwork&, const QNetwork&) = default;
};

struct QGrad {
  Tensor embeddings;
  NetGrad cameraBranch;
  NetGrad featureBranch;
  NetGrad combiner;

  QGrad& operator+=(const QGrad& other);
};

QGrad zeroGrad(const QNetwork& net);
void appendSlots(std::vector<ParamSlot>& slots, QNetwork& net, const QGrad& grad);

struct QTrace {
  Tensor camInput;  // camVector * embeddings, [1, D]
  ForwardTrace camera;
  ForwardTrace feature;
  ForwardTrace combiner;

  const Tensor& values() const { return combiner.output(); }
};

Tensor qValues(const QNetwork& net, const SelectionState& state);
QTrace qForward(const QNetwork& net, const SelectionState& state);

struct QBackprop {
  QGrad grad;
  Tensor obsGrad;  // dLoss / d obsVector, [1, D]
};

QBackprop qBackward(const QNetwork& net, const SelectionState& state, const QTrace& trace, const Tensor& valueGrad);

// Cameras that may not be selected next: already chosen ones (unless repeats
// are allowed) plus disabled ones.
std::vector<bool> actionMask(const SelectionState& state, const std::vector<bool>& disabled, bool allowRepeats);

// Epsilon-greedy choice. With probability epsilon a uniformly random unmasked
// camera, otherwise the unmasked argmax (ties go to the lowest id). Always
// consumes exactly one uniform draw before deciding, plus one integer draw on
// the random branch.
int selectAction(std::span<const double> values, double epsilon, const std::vector<bool>& masked, Rng& rng);
int selectAction(const QNetwork& net, const SelectionState& state, double epsilon, const std::vector<bool>& masked,
                 std::uint64_t rngSeed);

// Classification: 1 if argmax(prediction) == label else 0. Detection: -BEV loss.
double terminalReward(const Tensor& prediction, const Sample& groundTruth, TaskKind mode);

struct Trajectory {
  std::vector<SelectionState> states;  // s_1 .. s_T
  std::vector<int> actions;            // a_2 .. a_T
  std::vector<double> rewards;         // r_2 .. r_T
  std::vector<double> qTaken;          // Q(s_t, a_{t+1}), t = 1 .. T-1
  Tensor prediction;                   // task output on the T chosen views
  std::vector<bool> disabled;
  bool allowRepeats = false;

  int glances() const { return static_cast<int>(states.size()); }
  bool complete() const;
  const std::vector<int>& chosen() const { return states.back().chosen; }
};

// Supplies per-view features for one sample, computing them on first use.
class FeatureCache {
 public:
  FeatureCache(const TaskNetwork& net, const Sample& sample, bool keepTraces = false);
  explicit FeatureCache(const std::vector<Tensor>& precomputed);

  const Tensor& get(int view);
  // Only available when constructed with keepTraces.
  const ForwardTrace& trace(int view);

 private:
  const TaskNetwork* net_ = nullptr;
  const Sample* sample_ = nullptr;
  const std::vector<Tensor>* precomputed_ = nullptr;
  bool keepTraces_ = false;
  std::vector<std::optional<Tensor>> features_;
  std::vector<std::optional<ForwardTrace>> traces_;
};

struct RolloutOptions {
  int glances = 2;  // T
  double epsilon = 0.0;
  bool allowRepeats = false;
  std::vector<bool> disabled;  // empty: all cameras enabled
  double rewardScale = 1.0;
};

// Runs one episode from `initial`: T-1 epsilon-greedy selections, then the task
// network on the chosen views to produce the terminal reward.
Trajectory rollout(const QNetwork& qnet, const TaskNetwork& task, const Sample& sample, FeatureCache& features,
                   int initial, const RolloutOptions& options, Rng& rng);

// q_{T-1} = r_T; q_t = r_{t+1} + gamma * max over unmasked a of Q(s_{t+1}, a).
std::vector<double> tdTargets(const Trajectory& trajectory, const QNetwork& net, double gamma);

struct RlLoss {
  double loss = 0.0;
  int terms = 0;
  QGrad grad;
  std::vector<Tensor> obsGrads;  // per step t, dLoss / d s^obs_t
};

// Sum over t of (Q(s_t, a_{t+1}) - q_t)^2 with the targets held constant.
RlLoss rlLoss(const Trajectory& trajectory, const std::vector<double>& targets, const QNetwork& net);

}  // namespace mvsel
