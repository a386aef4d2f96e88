#include "mvselect/studies.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "mvselect/errors.hpp"

namespace mvsel {

namespace {

using nlohmann::json;

constexpr std::uint64_t kShutOffTag = 41;
constexpr std::uint64_t kPermutationTag = 42;

TrainConfig trainConfigFor(const ExperimentConfig& config, int glances) {
  TrainConfig t = config.train;
  t.glances = glances;
  t.seed = config.seed;
  return t;
}

std::string csvNumber(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

PolicyResult runPolicy(PolicyKind kind, const TaskNetwork& task, const QNetwork* selector, const Dataset& data,
                       int glances, const ExperimentConfig& config) {
  switch (kind) {
    case PolicyKind::MVSelect:
      if (selector == nullptr) throw std::invalid_argument("the mvselect policy needs a selector");
      return evaluateSelector(task, *selector, data, glances, config.eval);
    case PolicyKind::FullViews:
      return evaluateFullViews(task, data, config.eval);
    case PolicyKind::Random: {
      const int active = data.layout.activeCount();
      if (binomial(active - 1, glances - 1) <= config.eval.oracleMaxSets)
        return randomPolicy(enumerateSubsets(task, data, glances, config.eval), config.seed);
      return randomPolicySampled(task, data, glances, config.eval, config.study.randomDraws, config.seed);
    }
    case PolicyKind::DatasetOracle: {
      const SubsetTable table = enumerateSubsets(task, data, glances, config.eval);
      return applyDatasetPolicy(table, datasetOracleTable(table));
    }
    case PolicyKind::InstanceOracle:
      return instanceOracle(enumerateSubsets(task, data, glances, config.eval));
  }
  throw std::logic_error("unhandled policy kind");
}

QNetwork trainSelectorFor(const ExperimentConfig& config, const Dataset& train, const TaskNetwork& task, int glances,
                          std::optional<QNetSpec> spec) {
  QNetwork init = initialSelector(config, task.featureNet.outWidth(), config.seed, spec);
  return trainSelectorFixed(train, task, std::move(init), trainConfigFor(config, glances)).net;
}

JointTrainResult jointTrainFor(const ExperimentConfig& config, const Dataset& train, const TaskNetwork& task,
                               int glances) {
  QNetwork init = initialSelector(config, task.featureNet.outWidth(), config.seed);
  return jointTrain(train, task, std::move(init), trainConfigFor(config, glances));
}

PermutationTest pairedPermutationTest(std::span<const double> a, std::span<const double> b, int rounds,
                                      std::uint64_t seed) {
  if (a.size() != b.size()) throw DimensionError("paired test needs equally many values on both sides");
  PermutationTest t;
  t.pairs = a.size();
  if (a.empty()) return t;
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double observed = std::abs(std::accumulate(d.begin(), d.end(), 0.0));
  t.meanDifference = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double scale = 0.0;
  for (double v : d) scale += std::abs(v);
  const double slack = 1e-12 * std::max(1.0, scale);

  std::size_t hits = 0;
  if (d.size() <= 20) {
    const std::uint64_t total = std::uint64_t{1} << d.size();
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) s += (mask >> i & 1U) ? -d[i] : d[i];
      if (std::abs(s) >= observed - slack) ++hits;
    }
    t.exact = true;
    t.rounds = static_cast<std::size_t>(total);
    t.pValue = static_cast<double>(hits) / static_cast<double>(total);
    return t;
  }
  if (rounds < 1) throw std::invalid_argument("permutation test needs at least one round");
  Rng rng(streamSeed(seed, kPermutationTag, Split::Test, 0));
  std::bernoulli_distribution flip(0.5);
  for (int r = 0; r < rounds; ++r) {
    double s = 0.0;
    for (double v : d) s += flip(rng) ? -v : v;
    if (std::abs(s) >= observed - slack) ++hits;
  }
  t.exact = false;
  t.rounds = static_cast<std::size_t>(rounds);
  t.pValue = static_cast<double>(hits + 1) / static_cast<double>(rounds + 1);
  return t;
}

PermutationTest comparePolicies(const PolicyResult& a, const PolicyResult& b, TaskKind kind, int rounds,
                                std::uint64_t seed) {
  std::map<std::pair<std::size_t, int>, double> other;
  for (const auto& e : b.episodes) other[{e.sample, e.initial}] = primaryContribution(e.outcome, kind);
  std::vector<double> x, y;
  for (const auto& e : a.episodes) {
    const auto it = other.find({e.sample, e.initial});
    if (it == other.end()) throw StateError("policies were evaluated on different episodes");
    x.push_back(primaryContribution(e.outcome, kind));
    y.push_back(it->second);
  }
  return pairedPermutationTest(x, y, rounds, seed);
}

json toJson(const PermutationTest& t) {
  return {{"test", "paired sign-flip permutation"},
          {"pairs", t.pairs},
          {"mean_difference", t.meanDifference},
          {"p_value", t.pValue},
          {"exact", t.exact},
          {"rounds", t.rounds}};
}

json evalReport(const ExperimentConfig& config, const PolicyResult& result, const CostLedger& cost,
                const std::vector<std::uint64_t>& seeds) {
  json report = toJson(result);
  report["tool_version"] = kToolVersion;
  report["task"] = toString(config.task);
  report["config_hash"] = configHash(config);
  report["world_hash"] = worldHash(config);
  report["seeds"] = seeds;
  report["cameras"] = config.cameras();
  report["full_views"] = result.glances == cost.cameras;
  report["cost"] = toJson(cost);
  report["frequency"] = toJson(policyFrequency(result.episodes, config.cameras()));
  report["settings"] = {{"peak_threshold", config.eval.peakThreshold},
                        {"match_threshold_m", config.eval.matchThresholdM},
                        {"oracle_max_sets", config.eval.oracleMaxSets},
                        {"peak_rule", "3x3 local maximum above peak_threshold"},
                        {"matching", "greedy nearest-first, one-to-one"}};
  return report;
}

std::string frequencyCsv(const PolicyFrequency& f) {
  std::ostringstream out;
  out << "step,initial_view,selected_view,frequency\n";
  for (int s = 0; s < f.steps; ++s)
    for (int i = 0; i < f.cameras; ++i)
      for (int c = 0; c < f.cameras; ++c)
        out << s + 2 << ',' << i << ',' << c << ','
            << csvNumber(f.frequency[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)][static_cast<std::size_t>(c)])
            << '\n';
  return out.str();
}

const SweepRow* SweepResult::find(int glances, const std::string& policy) const {
  for (const auto& r : rows)
    if (r.glances == glances && r.policy == policy) return &r;
  return nullptr;
}

SweepResult sweepT(const ExperimentConfig& config, const ExperimentData& data, const TaskNetwork& task,
                   std::vector<int> tValues) {
  const int n = config.cameras();
  if (tValues.empty())
    for (int t = 1; t <= n; ++t) tValues.push_back(t);
  for (int t : tValues)
    if (t < 1 || t > data.test.layout.activeCount())
      throw ConfigError("eval.T_values", "T = " + std::to_string(t) + " is outside [1, N]");

  SweepResult out;
  const Dataset& test = data.test;
  const PolicyResult full = evaluateFullViews(task, test, config.eval);
  const QNetwork shape = initialSelector(config, task.featureNet.outWidth(), config.seed);
  const CostSpec spec = costSpec(task, &shape);

  for (int t : tValues) {
    const double ratio = costAccount(spec, n, t).ratio;
    auto add = [&](const std::string& policy, const PolicyResult& r) {
      out.rows.push_back({t, policy, r.metrics, ratio, r.exact});
    };
    add("random", runPolicy(PolicyKind::Random, task, nullptr, test, t, config));
    for (PolicyKind oracle : {PolicyKind::DatasetOracle, PolicyKind::InstanceOracle}) {
      try {
        add(toString(oracle), runPolicy(oracle, task, nullptr, test, t, config));
      } catch (const BudgetError& e) {
        out.notes.push_back("T=" + std::to_string(t) + " " + toString(oracle) + " skipped: " + e.what());
      }
    }
    if (t == 1) {
      const PolicyResult single = evaluateSelector(task, shape, test, 1, config.eval);
      add("mvselect", single);
      add("joint", single);
      add("full-views", full);
      add("joint-full-views", full);
      continue;
    }
    const QNetwork fixed = trainSelectorFor(config, data.train, task, t);
    add("mvselect", evaluateSelector(task, fixed, test, t, config.eval));
    const JointTrainResult joint = jointTrainFor(config, data.train, task, t);
    add("joint", evaluateSelector(joint.task, joint.selector, test, t, config.eval));
    add("full-views", full);
    add("joint-full-views", evaluateFullViews(joint.task, test, config.eval));
  }
  return out;
}

json toJson(const SweepResult& s) {
  json rows = json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"T", r.glances},
                    {"policy", r.policy},
                    {"metrics", toJson(r.metrics)},
                    {"primary", r.metrics.primary()},
                    {"cost_ratio", r.costRatio},
                    {"exact", r.exact}});
  return {{"rows", rows}, {"notes", s.notes}};
}

std::string sweepCsv(const SweepResult& s) {
  std::ostringstream out;
  out << "T,policy,primary,accuracy,moda,modp,precision,recall,cost_ratio,exact\n";
  for (const auto& r : s.rows)
    out << r.glances << ',' << r.policy << ',' << csvNumber(r.metrics.primary()) << ','
        << csvNumber(r.metrics.accuracy) << ',' << csvNumber(r.metrics.moda) << ',' << csvNumber(r.metrics.modp)
        << ',' << csvNumber(r.metrics.precision) << ',' << csvNumber(r.metrics.recall) << ','
        << csvNumber(r.costRatio) << ',' << (r.exact ? "true" : "false") << '\n';
  return out.str();
}

ShutOffResult shutOffStudy(const ExperimentConfig& config, const ExperimentData& data, const TaskNetwork& task,
                           const QNetwork& selector, int k) {
  const int glances = config.train.glances;
  const std::vector<int> active = data.test.layout.activeCameras();
  const int remaining = static_cast<int>(active.size()) - k;
  if (k < 0) throw ConfigError("eval.shutoff_k", "must be non-negative");
  if (remaining < glances)
    throw ConfigError("eval.shutoff_k", "disabling " + std::to_string(k) + " cameras leaves " +
                                            std::to_string(remaining) + ", fewer than T = " + std::to_string(glances));
  if (k > 0 && remaining < 2)
    throw ConfigError("eval.shutoff_k", "at least two cameras must stay enabled");

  ShutOffResult r;
  r.k = k;
  r.glances = glances;
  r.baseline = evaluateSelector(task, selector, data.test, glances, config.eval).metrics;
  const PolicyResult validation = evaluateSelector(task, selector, data.validation, glances, config.eval);
  r.usage = policyFrequency(validation.episodes, config.cameras()).usage;

  std::vector<int> ranking = active;
  std::stable_sort(ranking.begin(), ranking.end(), [&](int a, int b) {
    return r.usage[static_cast<std::size_t>(a)] < r.usage[static_cast<std::size_t>(b)];
  });
  r.disabled.assign(ranking.begin(), ranking.begin() + k);
  std::sort(r.disabled.begin(), r.disabled.end());

  Dataset work = data.test;
  auto evaluateWithout = [&](const std::vector<int>& off) {
    work.layout = off.empty() ? data.test.layout : shutOffCameras(data.test.layout, off, glances);
    return evaluateSelector(task, selector, work, glances, config.eval).metrics;
  };
  r.policyShutOff = evaluateWithout(r.disabled);

  Rng rng(streamSeed(config.seed, kShutOffTag, Split::Test, 0));
  double sum = 0.0;
  for (int i = 0; i < config.study.shutoffRandomSubsets; ++i) {
    std::vector<int> pool = active;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> off(pool.begin(), pool.begin() + k);
    std::sort(off.begin(), off.end());
    r.randomShutOff.push_back(evaluateWithout(off));
    r.randomSubsets.push_back(std::move(off));
    sum += r.randomShutOff.back().primary();
  }
  r.randomMean = sum / static_cast<double>(config.study.shutoffRandomSubsets);
  return r;
}

json toJson(const ShutOffResult& s) {
  json random = json::array();
  for (std::size_t i = 0; i < s.randomSubsets.size(); ++i)
    random.push_back({{"disabled", s.randomSubsets[i]}, {"metrics", toJson(s.randomShutOff[i])}});
  return {{"k", s.k},
          {"T", s.glances},
          {"validation_usage", s.usage},
          {"disabled", s.disabled},
          {"baseline", toJson(s.baseline)},
          {"policy_shutoff", toJson(s.policyShutOff)},
          {"random_shutoff", random},
          {"random_shutoff_mean_primary", s.randomMean}};
}

std::vector<AblationRow> ablationStudy(const ExperimentConfig& config, const ExperimentData& data,
                                       const TaskNetwork& task) {
  const int glances = config.train.glances;
  std::vector<std::pair<std::string, QNetSpec>> variants;
  QNetSpec full = config.selector;
  full.cameraBranch = true;
  full.featureBranch = true;
  QNetSpec noCamera = full;
  noCamera.cameraBranch = false;
  QNetSpec noFeature = full;
  noFeature.featureBranch = false;
  variants = {{"full", full}, {"no-camera-branch", noCamera}, {"no-feature-branch", noFeature}};

  std::vector<AblationRow> rows;
  for (const auto& [name, spec] : variants) {
    const QNetwork sel = trainSelectorFor(config, data.train, task, glances, spec);
    rows.push_back({name, evaluateSelector(task, sel, data.test, glances, config.eval).metrics});
  }
  return rows;
}

json toJson(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.variant}, {"metrics", toJson(r.metrics)}, {"primary", r.metrics.primary()}});
  return out;
}

RandomPoseResult randomPoseStudy(const ExperimentConfig& config, const TaskNetwork& task) {
  if (config.task != TaskKind::Classification)
    throw ConfigError("task", "the random-pose study runs on the classification world");
  ExperimentConfig posed = config;
  posed.classification.randomPose = true;
  const ExperimentData data = buildData(posed);
  const int glances = config.train.glances;

  RandomPoseResult r;
  r.retrainedTask = config.study.retrainTaskForRandomPose;
  const TaskNetwork net = r.retrainedTask
                              ? trainTaskNetwork(data.train, initialTaskNetwork(posed, posed.seed),
                                                 trainConfigFor(posed, glances))
                                    .net
                              : task;
  const QNetwork sel = trainSelectorFor(posed, data.train, net, glances);
  r.random = runPolicy(PolicyKind::Random, net, nullptr, data.test, glances, posed);
  r.datasetOracle = runPolicy(PolicyKind::DatasetOracle, net, nullptr, data.test, glances, posed);
  r.mvselect = evaluateSelector(net, sel, data.test, glances, posed.eval);
  return r;
}

json toJson(const RandomPoseResult& r) {
  return {{"retrained_task_network", r.retrainedTask},
          {"random", toJson(r.random)},
          {"dataset_oracle", toJson(r.datasetOracle)},
          {"mvselect", toJson(r.mvselect)}};
}

}  // namespace mvsel
