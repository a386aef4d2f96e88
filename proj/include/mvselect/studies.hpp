#pragma once

// Evaluation reports and the experiment studies built on top of the policies:
// the T-sweep, camera shut-off, selector ablation, random camera pose, and the
// paired permutation test used to compare two policies.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvselect/experiment.hpp"
#include "mvselect/metrics.hpp"
#include "mvselect/policies.hpp"

namespace mvsel {

// Random uses the exact expectation when enumeration fits the budget and a
// sampled estimate otherwise; the oracles throw BudgetError when over budget.
PolicyResult runPolicy(PolicyKind kind, const TaskNetwork& task, const QNetwork* selector, const Dataset& data,
                       int glances, const ExperimentConfig& config);

// Selector training against a frozen task network, with T and the selector
// architecture overridable.
QNetwork trainSelectorFor(const ExperimentConfig& config, const Dataset& train, const TaskNetwork& task, int glances,
                          std::optional<QNetSpec> spec = std::nullopt);
JointTrainResult jointTrainFor(const ExperimentConfig& config, const Dataset& train, const TaskNetwork& task,
                               int glances);

struct PermutationTest {
  std::size_t pairs = 0;
  double meanDifference = 0.0;  // mean of a - b
  double pValue = 1.0;          // two-sided
  bool exact = true;            // all 2^n sign flips enumerated
  std::size_t rounds = 0;
};

// Sign-flip test on paired differences. Exact when n <= 20, otherwise Monte
// Carlo with `rounds` draws and the (count + 1) / (rounds + 1) estimate.
PermutationTest pairedPermutationTest(std::span<const double> a, std::span<const double> b, int rounds,
                                      std::uint64_t seed);
// Pairs episodes by (sample, initial view) and compares primary contributions.
PermutationTest comparePolicies(const PolicyResult& a, const PolicyResult& b, TaskKind kind, int rounds,
                                std::uint64_t seed);
nlohmann::json toJson(const PermutationTest& t);

nlohmann::json evalReport(const ExperimentConfig& config, const PolicyResult& result, const CostLedger& cost,
                          const std::vector<std::uint64_t>& seeds);
std::string frequencyCsv(const PolicyFrequency& frequency);

struct SweepRow {
  int glances = 0;
  std::string policy;  // random, dataset-oracle, instance-oracle, mvselect, joint, full-views, joint-full-views
  MetricBundle metrics;
  double costRatio = 0.0;
  bool exact = true;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> notes;  // oracle rows skipped for budget reasons

  const SweepRow* find(int glances, const std::string& policy) const;
};

// Per T: selectors are trained from `task` for that T (fixed and joint). At
// T = 1 nothing is selected, so the selector rows reuse the single-view
// evaluation. joint-full-views is the full system with the jointly trained task
// network, the reference the joint row collapses to at T = N.
SweepResult sweepT(const ExperimentConfig& config, const ExperimentData& data, const TaskNetwork& task,
                   std::vector<int> tValues);
nlohmann::json toJson(const SweepResult& s);
std::string sweepCsv(const SweepResult& s);

struct ShutOffResult {
  int k = 0;
  int glances = 0;
  std::vector<double> usage;  // validation selection share per camera
  std::vector<int> disabled;  // bottom-k by usage, ties broken by lower id
  MetricBundle baseline;
  MetricBundle policyShutOff;
  std::vector<std::vector<int>> randomSubsets;
  std::vector<MetricBundle> randomShutOff;
  double randomMean = 0.0;  // mean primary metric over the random subsets
};

// Throws ConfigError when k is negative or leaves fewer than T cameras.
ShutOffResult shutOffStudy(const ExperimentConfig& config, const ExperimentData& data, const TaskNetwork& task,
                           const QNetwork& selector, int k);
nlohmann::json toJson(const ShutOffResult& s);

struct AblationRow {
  std::string variant;  // full, no-camera-branch, no-feature-branch
  MetricBundle metrics;
};

std::vector<AblationRow> ablationStudy(const ExperimentConfig& config, const ExperimentData& data,
                                       const TaskNetwork& task);
nlohmann::json toJson(const std::vector<AblationRow>& rows);

struct RandomPoseResult {
  bool retrainedTask = false;
  PolicyResult random;
  PolicyResult datasetOracle;
  PolicyResult mvselect;
};

// Regenerates the classification world with a uniformly random pose per
// instance, retrains the selector (and optionally the task network), and
// evaluates random, dataset-oracle and MVSelect on the test split.
RandomPoseResult randomPoseStudy(const ExperimentConfig& config, const TaskNetwork& task);
nlohmann::json toJson(const RandomPoseResult& r);

}  // namespace mvsel
