#include "mvselect/policies.hpp"

#include <algorithm>
#include <set>

namespace mvsel {

namespace {

constexpr std::uint64_t kRandomPolicyTag = 21;

std::vector<bool> disabledMask(const CameraLayout& layout) {
  std::vector<bool> mask(static_cast<std::size_t>(layout.count()));
  for (int c = 0; c < layout.count(); ++c) mask[static_cast<std::size_t>(c)] = !layout.enabled(c);
  return mask;
}

void combinations(const std::vector<int>& pool, std::size_t k, std::size_t start, std::vector<int>& current,
                  std::vector<std::vector<int>>& out) {
  if (current.size() == k) {
    out.push_back(current);
    return;
  }
  for (std::size_t i = start; i + (k - current.size()) <= pool.size(); ++i) {
    current.push_back(pool[i]);
    combinations(pool, k, i + 1, current, out);
    current.pop_back();
  }
}

std::vector<int> withInitial(int initial, const std::vector<int>& rest) {
  std::vector<int> views{initial};
  views.insert(views.end(), rest.begin(), rest.end());
  return views;
}

// Uniform ordered follow-up sequence, drawn the way an epsilon = 1 policy would.
std::vector<int> randomSequence(int initial, int glances, const std::vector<bool>& disabled, Rng& rng) {
  const std::vector<double> zeros(disabled.size(), 0.0);
  std::vector<bool> mask = disabled;
  mask[static_cast<std::size_t>(initial)] = true;
  std::vector<int> seq;
  for (int t = 1; t < glances; ++t) {
    const int a = selectAction(zeros, 1.0, mask, rng);
    mask[static_cast<std::size_t>(a)] = true;
    seq.push_back(a);
  }
  return seq;
}

std::size_t findSet(const std::vector<std::vector<int>>& sets, std::vector<int> seq) {
  std::sort(seq.begin(), seq.end());
  const auto it = std::find(sets.begin(), sets.end(), seq);
  if (it == sets.end()) throw std::invalid_argument("sequence is not a valid follow-up set for this table");
  return static_cast<std::size_t>(it - sets.begin());
}

PolicyResult finish(PolicyResult r, TaskKind kind) {
  r.metrics = summarize(r.total, kind);
  return r;
}

}  // namespace

std::string toString(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::MVSelect: return "mvselect";
    case PolicyKind::Random: return "random";
    case PolicyKind::DatasetOracle: return "dataset-oracle";
    case PolicyKind::InstanceOracle: return "instance-oracle";
    case PolicyKind::FullViews: return "full-views";
  }
  return "random";
}

PolicyKind policyFromString(const std::string& name) {
  for (auto k : {PolicyKind::MVSelect, PolicyKind::Random, PolicyKind::DatasetOracle, PolicyKind::InstanceOracle,
                 PolicyKind::FullViews})
    if (toString(k) == name) return k;
  throw ConfigError("policy", "unknown policy '" + name +
                                  "' (expected mvselect, random, dataset-oracle, instance-oracle or full-views)");
}

void PolicyTable::validate() const {
  auto check = [&](int initial, const std::vector<int>& seq) {
    if (static_cast<int>(seq.size()) != glances - 1)
      throw std::invalid_argument("policy sequence for initial view " + std::to_string(initial) + " has length " +
                                  std::to_string(seq.size()) + ", expected " + std::to_string(glances - 1));
    std::set<int> seen{initial};
    for (int a : seq)
      if (!seen.insert(a).second)
        throw std::invalid_argument("policy sequence for initial view " + std::to_string(initial) +
                                    " repeats camera " + std::to_string(a));
  };
  for (const auto& [initial, seq] : datasetLevel) check(initial, seq);
  for (const auto& e : instanceLevel) check(e.initial, e.sequence);
}

nlohmann::json PolicyTable::toJson() const {
  nlohmann::json j{{"glances", glances}, {"split", split}};
  if (!datasetLevel.empty()) {
    nlohmann::json d = nlohmann::json::array();
    for (const auto& [initial, seq] : datasetLevel) d.push_back({{"initial", initial}, {"sequence", seq}});
    j["dataset_level"] = d;
  }
  if (!instanceLevel.empty()) {
    nlohmann::json d = nlohmann::json::array();
    for (const auto& e : instanceLevel) d.push_back({{"sample", e.sample}, {"initial", e.initial}, {"sequence", e.sequence}});
    j["instance_level"] = d;
  }
  return j;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

SubsetTable enumerateSubsets(const TaskNetwork& task, const Dataset& data, int glances, const EvalSettings& settings) {
  const std::vector<int> active = data.layout.activeCameras();
  const int M = static_cast<int>(active.size());
  if (glances < 1 || glances > M)
    throw std::invalid_argument("T = " + std::to_string(glances) + " must lie in [1, " + std::to_string(M) + "]");
  const std::uint64_t count = binomial(M - 1, glances - 1);
  if (count > settings.oracleMaxSets)
    throw BudgetError("exhaustive search needs C(" + std::to_string(M - 1) + ", " + std::to_string(glances - 1) +
                      ") = " + std::to_string(count) + " view sets per initial view, above the budget of " +
                      std::to_string(settings.oracleMaxSets) +
                      "; use fewer cameras, a smaller T, or raise eval.oracle_max_sets");

  SubsetTable t;
  t.kind = data.kind;
  t.cameras = data.cameraCount();
  t.glances = glances;
  t.split = toString(data.split);
  t.initials = active;
  for (int initial : active) {
    std::vector<int> pool;
    for (int c : active)
      if (c != initial) pool.push_back(c);
    std::vector<std::vector<int>> sets;
    std::vector<int> current;
    combinations(pool, static_cast<std::size_t>(glances - 1), 0, current, sets);
    t.sets.push_back(std::move(sets));
  }
  t.outcomes.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    const std::vector<Tensor> feats = extractAll(task, s);
    std::vector<std::vector<Outcome>> perInitial;
    for (std::size_t i = 0; i < active.size(); ++i) {
      std::vector<Outcome> row;
      row.reserve(t.sets[i].size());
      for (const auto& set : t.sets[i]) {
        const auto views = withInitial(active[i], set);
        row.push_back(scorePrediction(predict(task, feats, views), s, data, settings));
      }
      perInitial.push_back(std::move(row));
    }
    t.outcomes.push_back(std::move(perInitial));
  }
  return t;
}

PolicyResult randomPolicy(const SubsetTable& table, std::uint64_t seed) {
  PolicyResult r;
  r.kind = PolicyKind::Random;
  r.glances = table.glances;
  r.split = table.split;
  std::vector<bool> disabled(static_cast<std::size_t>(table.cameras), true);
  for (int c : table.initials) disabled[static_cast<std::size_t>(c)] = false;
  Rng rng(streamSeed(seed, kRandomPolicyTag, Split::Test, 0));
  for (std::size_t s = 0; s < table.outcomes.size(); ++s)
    for (std::size_t i = 0; i < table.initials.size(); ++i) {
      const auto& row = table.outcomes[s][i];
      Outcome mean;
      for (const auto& o : row) mean += o;
      r.total += mean.scaled(1.0 / static_cast<double>(row.size()));
      Episode e;
      e.sample = s;
      e.initial = table.initials[i];
      e.sequence = randomSequence(e.initial, table.glances, disabled, rng);
      e.outcome = row[findSet(table.sets[i], e.sequence)];
      r.episodes.push_back(std::move(e));
    }
  return finish(std::move(r), table.kind);
}

PolicyResult randomPolicySampled(const TaskNetwork& task, const Dataset& data, int glances,
                                 const EvalSettings& settings, int draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("random policy needs at least one draw");
  PolicyResult r;
  r.kind = PolicyKind::Random;
  r.glances = glances;
  r.split = toString(data.split);
  r.exact = false;
  const std::vector<bool> disabled = disabledMask(data.layout);
  Rng rng(streamSeed(seed, kRandomPolicyTag, Split::Test, 1));
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    const std::vector<Tensor> feats = extractAll(task, data.samples[s]);
    for (int initial : data.layout.activeCameras()) {
      Outcome mean;
      for (int d = 0; d < draws; ++d) {
        Episode e;
        e.sample = s;
        e.initial = initial;
        e.sequence = randomSequence(initial, glances, disabled, rng);
        e.outcome = scorePrediction(predict(task, feats, withInitial(initial, e.sequence)), data.samples[s], data, settings);
        mean += e.outcome;
        if (d == 0) r.episodes.push_back(std::move(e));
      }
      r.total += mean.scaled(1.0 / draws);
    }
  }
  return finish(std::move(r), data.kind);
}

PolicyTable datasetOracleTable(const SubsetTable& table) {
  PolicyTable p;
  p.glances = table.glances;
  p.split = table.split;
  for (std::size_t i = 0; i < table.initials.size(); ++i) {
    std::vector<double> score(table.sets[i].size(), 0.0);
    for (const auto& sample : table.outcomes)
      for (std::size_t k = 0; k < score.size(); ++k) score[k] += primaryContribution(sample[i][k], table.kind);
    const auto best = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
    p.datasetLevel[table.initials[i]] = table.sets[i][best];
  }
  return p;
}

PolicyResult applyDatasetPolicy(const SubsetTable& table, const PolicyTable& policy) {
  PolicyResult r;
  r.kind = PolicyKind::DatasetOracle;
  r.glances = table.glances;
  r.split = table.split;
  r.table = policy;
  if (policy.glances != table.glances) throw std::invalid_argument("policy table and subset table disagree on T");
  for (std::size_t i = 0; i < table.initials.size(); ++i) {
    const auto it = policy.datasetLevel.find(table.initials[i]);
    if (it == policy.datasetLevel.end())
      throw std::invalid_argument("policy table has no entry for initial view " + std::to_string(table.initials[i]));
    const std::size_t k = findSet(table.sets[i], it->second);
    for (std::size_t s = 0; s < table.outcomes.size(); ++s) {
      r.total += table.outcomes[s][i][k];
      r.episodes.push_back({s, table.initials[i], it->second, table.outcomes[s][i][k]});
    }
  }
  return finish(std::move(r), table.kind);
}

PolicyResult instanceOracle(const SubsetTable& table) {
  PolicyResult r;
  r.kind = PolicyKind::InstanceOracle;
  r.glances = table.glances;
  r.split = table.split;
  r.table.glances = table.glances;
  r.table.split = table.split;
  for (std::size_t s = 0; s < table.outcomes.size(); ++s)
    for (std::size_t i = 0; i < table.initials.size(); ++i) {
      const auto& row = table.outcomes[s][i];
      std::size_t best = 0;
      for (std::size_t k = 1; k < row.size(); ++k)
        if (primaryContribution(row[k], table.kind) > primaryContribution(row[best], table.kind)) best = k;
      r.total += row[best];
      Episode e{s, table.initials[i], table.sets[i][best], row[best]};
      r.table.instanceLevel.push_back(e);
      r.episodes.push_back(std::move(e));
    }
  return finish(std::move(r), table.kind);
}

PolicyResult evaluateSelector(const TaskNetwork& task, const QNetwork& selector, const Dataset& data, int glances,
                              const EvalSettings& settings) {
  PolicyResult r;
  r.kind = PolicyKind::MVSelect;
  r.glances = glances;
  r.split = toString(data.split);
  RolloutOptions ro;
  ro.glances = glances;
  ro.epsilon = 0.0;
  ro.disabled = disabledMask(data.layout);
  Rng rng(0);  // greedy rollouts draw but never use randomness
  const std::vector<int> active = data.layout.activeCameras();
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    const Sample& sample = data.samples[s];
    const std::vector<Tensor> feats = extractAll(task, sample);
    FeatureCache cache(feats);
    for (int initial : active) {
      const Trajectory traj = rollout(selector, task, sample, cache, initial, ro, rng);
      Episode e{s, initial, traj.actions, scorePrediction(traj.prediction, sample, data, settings)};
      r.total += e.outcome;
      r.episodes.push_back(std::move(e));
    }
  }
  return finish(std::move(r), data.kind);
}

PolicyResult evaluateFullViews(const TaskNetwork& task, const Dataset& data, const EvalSettings& settings) {
  PolicyResult r;
  r.kind = PolicyKind::FullViews;
  const std::vector<int> active = data.layout.activeCameras();
  r.glances = static_cast<int>(active.size());
  r.split = toString(data.split);
  // Every initial view yields the same episode; it is counted once per enabled
  // view so totals line up with the other policies.
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    const std::vector<Tensor> feats = extractAll(task, data.samples[s]);
    const Outcome o = scorePrediction(predict(task, feats, active), data.samples[s], data, settings);
    for (int initial : active) {
      r.total += o;
      std::vector<int> rest;
      for (int c : active)
        if (c != initial) rest.push_back(c);
      r.episodes.push_back({s, initial, rest, o});
    }
  }
  return finish(std::move(r), data.kind);
}

nlohmann::json toJson(const PolicyResult& r, bool withEpisodes) {
  nlohmann::json j{{"policy", toString(r.kind)}, {"T", r.glances}, {"split", r.split},
                   {"metrics", toJson(r.metrics)}, {"exact", r.exact}};
  if (!r.table.datasetLevel.empty() || !r.table.instanceLevel.empty()) j["policy_table_split"] = r.table.split;
  if (!r.table.datasetLevel.empty()) j["policy_table"] = r.table.toJson();
  if (withEpisodes) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.episodes) eps.push_back({{"sample", e.sample}, {"initial", e.initial}, {"sequence", e.sequence}});
    j["episodes"] = eps;
  }
  return j;
}

}  // namespace mvsel
