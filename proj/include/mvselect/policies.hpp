#pragma once

// Evaluation of view-selection policies with a fixed task network: the learned
// selector, random selection, the dataset-level and instance-level oracles, and
// the all-views system. Every policy is averaged over all enabled initial views.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvselect/metrics.hpp"
#include "mvselect/mvselect.hpp"
#include "mvselect/tasknet.hpp"

namespace mvsel {

enum class PolicyKind { MVSelect, Random, DatasetOracle, InstanceOracle, FullViews };

std::string toString(PolicyKind kind);
PolicyKind policyFromString(const std::string& name);

// Dataset level: one follow-up sequence per initial view. Instance level: one
// episode per (sample, initial view).
struct PolicyTable {
  int glances = 0;
  std::string split;
  std::map<int, std::vector<int>> datasetLevel;
  std::vector<Episode> instanceLevel;

  // Sequences must have T-1 distinct entries that exclude the initial view.
  void validate() const;
  nlohmann::json toJson() const;
};

struct PolicyResult {
  PolicyKind kind = PolicyKind::Random;
  int glances = 0;
  std::string split;
  Outcome total;
  MetricBundle metrics;
  std::vector<Episode> episodes;
  PolicyTable table;
  bool exact = true;  // false when the random policy had to be sampled
};

std::uint64_t binomial(int n, int k);

// Outcome of every follow-up set (order is irrelevant under max pooling) for
// every sample and enabled initial view. Sets are enumerated in lexicographic
// order and stored as sorted id lists.
struct SubsetTable {
  TaskKind kind = TaskKind::Classification;
  int cameras = 0;
  int glances = 0;
  std::string split;
  std::vector<int> initials;
  std::vector<std::vector<std::vector<int>>> sets;         // [initial][set]
  std::vector<std::vector<std::vector<Outcome>>> outcomes;  // [sample][initial][set]
};

// Throws BudgetError when C(M-1, T-1) exceeds settings.oracleMaxSets, where M
// is the number of enabled cameras.
SubsetTable enumerateSubsets(const TaskNetwork& task, const Dataset& data, int glances, const EvalSettings& settings);

// Exact expectation over uniformly random follow-up sets, plus one sampled
// episode per (sample, initial view) for frequency analysis.
PolicyResult randomPolicy(const SubsetTable& table, std::uint64_t seed);
// Sampled estimate used when enumeration is over budget.
PolicyResult randomPolicySampled(const TaskNetwork& task, const Dataset& data, int glances,
                                 const EvalSettings& settings, int draws, std::uint64_t seed);

// Per initial view, the set with the best summed primary metric (first in
// lexicographic order on ties).
PolicyTable datasetOracleTable(const SubsetTable& table);
PolicyResult applyDatasetPolicy(const SubsetTable& table, const PolicyTable& policy);
PolicyResult instanceOracle(const SubsetTable& table);

// Greedy (epsilon = 0) rollouts of the selector from every enabled initial view.
PolicyResult evaluateSelector(const TaskNetwork& task, const QNetwork& selector, const Dataset& data, int glances,
                              const EvalSettings& settings);
PolicyResult evaluateFullViews(const TaskNetwork& task, const Dataset& data, const EvalSettings& settings);

nlohmann::json toJson(const PolicyResult& result, bool withEpisodes = false);

}  // namespace mvsel
