// Command-line driver: train, eval, study and oracle subcommands.
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 world/model
// mismatch, 4 enumeration budget exceeded.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mvselect/errors.hpp"
#include "mvselect/experiment.hpp"
#include "mvselect/studies.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvsel;

namespace {

constexpr const char* kOutEnv = "MVSELECT_OUT";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string regime;
  std::string policy;
  std::optional<int> glances;
  bool force = false;
  std::string taskCkpt;
  std::string selectorCkpt;
  std::string study;
  std::string split = "test";
};

struct Run {
  ExperimentConfig config;
  fs::path root;  // output root, holds objects/
  fs::path dir;   // per-config run directory
  std::string configHash;
  std::string worldHash;
};

Run openRun(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config", "a config file is required");
  Run r;
  r.config = loadConfig(o.config);
  if (o.seed) {
    r.config.seed = *o.seed;
    r.config.train.seed = *o.seed;
  }
  if (o.glances) {
    r.config.train.glances = *o.glances;
    r.config.train.validate(r.config.cameras());
  }
  if (!o.out.empty()) r.root = o.out;
  else if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') r.root = env;
  else r.root = r.config.outputDir;
  r.configHash = configHash(r.config);
  r.worldHash = worldHash(r.config);
  r.dir = r.root / (toString(r.config.task) + "-" + r.configHash.substr(0, 12));
  return r;
}

json checkpointMeta(const Run& r, const std::string& regime, const std::string& role) {
  return {{"tool_version", kToolVersion}, {"world_hash", r.worldHash}, {"config_hash", r.configHash},
          {"seed", r.config.seed},        {"regime", regime},          {"role", role},
          {"T", r.config.train.glances}};
}

// Files are written first and the manifest last, so a manifest never points at
// a file that is not on disk.
class Manifest {
 public:
  Manifest(const Run& run, std::string name) : run_(run), name_(std::move(name)) {}

  bool exists() const { return fs::exists(path()); }
  fs::path path() const { return run_.dir / ("manifest-" + name_ + ".json"); }

  void add(const std::string& role, const fs::path& file, const std::string& bytes) {
    artifacts_.push_back({{"role", role},
                          {"path", fs::relative(file, run_.root).generic_string()},
                          {"sha256", sha256Hex(bytes)},
                          {"bytes", bytes.size()}});
  }
  void write(const std::string& role, const fs::path& file, const std::string& bytes) {
    writeFileAtomic(file, bytes);
    add(role, file, bytes);
  }
  std::string storeCheckpoint(const std::string& role, const std::string& bytes) {
    const std::string rel = storeObject(run_.root, bytes);
    add(role, run_.root / rel, bytes);
    return rel;
  }
  void commit(double seconds, const json& extra = json::object()) {
    json m{{"tool_version", kToolVersion}, {"name", name_},           {"config", toJson(run_.config)},
           {"config_hash", run_.configHash}, {"world_hash", run_.worldHash}, {"seed", run_.config.seed},
           {"artifacts", artifacts_},        {"timing", {{"seconds", seconds}}}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    writeFileAtomic(path(), m.dump(2) + "\n");
  }

 private:
  const Run& run_;
  std::string name_;
  json artifacts_ = json::array();
};

std::string jsonLines(const MetricLog& log) {
  std::string out;
  for (const auto& line : log) out += line.dump() + "\n";
  return out;
}

// Looks up the checkpoint with `role` in a manifest of the run directory.
std::optional<fs::path> fromManifest(const Run& r, const std::string& name, const std::string& role) {
  const fs::path p = r.dir / ("manifest-" + name + ".json");
  if (!fs::exists(p)) return std::nullopt;
  const json m = json::parse(readFile(p));
  for (const auto& a : m.at("artifacts"))
    if (a.at("role").get<std::string>() == role) return r.root / a.at("path").get<std::string>();
  return std::nullopt;
}

TaskNetwork loadTask(const Run& r, const fs::path& path) {
  DecodedCheckpoint ck = readCheckpoint(path);
  if (!ck.task) throw ConfigError("--task-ckpt", path.string() + " is not a task network checkpoint");
  checkWorld(ck, r.worldHash);
  return std::move(*ck.task);
}

QNetwork loadSelector(const Run& r, const fs::path& path) {
  DecodedCheckpoint ck = readCheckpoint(path);
  if (!ck.selector) throw ConfigError("--selector-ckpt", path.string() + " is not a selector checkpoint");
  checkWorld(ck, r.worldHash);
  return std::move(*ck.selector);
}

std::optional<fs::path> resolveTask(const Run& r, const Options& o, const std::string& regime) {
  if (!o.taskCkpt.empty()) return fs::path(o.taskCkpt);
  if (regime == "joint") return fromManifest(r, "joint", "task");
  return fromManifest(r, "task", "task");
}

std::optional<fs::path> resolveSelector(const Run& r, const Options& o, const std::string& regime) {
  if (!o.selectorCkpt.empty()) return fs::path(o.selectorCkpt);
  if (regime == "joint") return fromManifest(r, "joint", "selector");
  return fromManifest(r, "select-fixed", "selector");
}

TaskNetwork requireTask(const Run& r, const Options& o, const std::string& regime) {
  const auto p = resolveTask(r, o, regime);
  if (!p) throw ConfigError("--task-ckpt", "no task network checkpoint given and none found in " + r.dir.string() +
                                               "; run 'train --regime task' first");
  return loadTask(r, *p);
}

QNetwork requireSelector(const Run& r, const Options& o, const std::string& regime) {
  const auto p = resolveSelector(r, o, regime);
  if (!p) throw ConfigError("--selector-ckpt", "no selector checkpoint given and none found in " + r.dir.string() +
                                                   "; run 'train --regime select-fixed' first");
  return loadSelector(r, *p);
}

double secondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmdTrain(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  Run r = openRun(o);
  const Regime regime = regimeFromString(o.regime.empty() ? "task" : o.regime);
  r.config.train.regime = regime;
  const std::string name = toString(regime);
  Manifest manifest(r, name);
  if (manifest.exists() && !o.force)
    throw ConfigError("--force", manifest.path().string() + " already exists; pass --force to overwrite it");

  // Dependencies are resolved before any data is generated.
  std::optional<TaskNetwork> pretrained;
  if (regime == Regime::SelectFixed) pretrained = requireTask(r, o, "task");
  if (regime == Regime::Joint)
    if (const auto p = resolveTask(r, o, "task")) pretrained = loadTask(r, *p);

  const ExperimentData data = buildData(r.config);
  const fs::path log = r.dir / ("train-" + name + ".jsonl");
  std::string logText;
  json extra{{"regime", name}};

  if (regime == Regime::TaskOnly) {
    TaskTrainResult res = trainTaskNetwork(data.train, initialTaskNetwork(r.config, r.config.seed), r.config.train);
    manifest.storeCheckpoint("task", encodeCheckpoint(res.net, checkpointMeta(r, name, "task")));
    logText = jsonLines(res.log);
  } else if (regime == Regime::SelectFixed) {
    SelectorTrainResult res =
        trainSelectorFixed(data.train, *pretrained,
                           initialSelector(r.config, pretrained->featureNet.outWidth(), r.config.seed),
                           r.config.train);
    manifest.storeCheckpoint("selector", encodeCheckpoint(res.net, checkpointMeta(r, name, "selector")));
    logText = jsonLines(res.log);
  } else {
    MetricLog pre;
    if (!pretrained) {
      TaskTrainResult res = trainTaskNetwork(data.train, initialTaskNetwork(r.config, r.config.seed), r.config.train);
      pretrained = std::move(res.net);
      pre = std::move(res.log);
      extra["pretrained_internally"] = true;
    }
    JointTrainResult res = jointTrainFor(r.config, data.train, *pretrained, r.config.train.glances);
    manifest.storeCheckpoint("task", encodeCheckpoint(res.task, checkpointMeta(r, name, "task")));
    manifest.storeCheckpoint("selector", encodeCheckpoint(res.selector, checkpointMeta(r, name, "selector")));
    logText = jsonLines(pre) + jsonLines(res.log);
    extra["joint_stats"] = {{"iterations", res.stats.iterations},
                            {"rl_terms", res.stats.rlTerms},
                            {"task_terms", res.stats.taskTerms}};
  }
  manifest.write("log", log, logText);
  manifest.commit(secondsSince(start), extra);
  std::cout << "wrote " << manifest.path().string() << "\n";
  return 0;
}

Dataset splitFor(const ExperimentData& data, const std::string& split) {
  if (split == "test") return data.test;
  if (split == "validation") return data.validation;
  if (split == "train") return data.train;
  throw ConfigError("--split", "expected train, validation or test");
}

int cmdEval(const Options& o, bool oracleOnly) {
  const auto start = std::chrono::steady_clock::now();
  Run r = openRun(o);
  const std::string policyName = o.policy.empty() ? (oracleOnly ? "dataset-oracle" : "mvselect") : o.policy;
  const PolicyKind kind = policyFromString(policyName);
  if (oracleOnly && kind != PolicyKind::DatasetOracle && kind != PolicyKind::InstanceOracle)
    throw ConfigError("--policy", "the oracle command takes dataset-oracle or instance-oracle");
  const std::string regime = o.regime.empty() ? "select-fixed" : o.regime;
  if (regime != "select-fixed" && regime != "joint")
    throw ConfigError("--regime", "eval reads checkpoints of the select-fixed or joint regime");

  const TaskNetwork task = requireTask(r, o, regime == "joint" && o.taskCkpt.empty() ? "joint" : "task");
  std::optional<QNetwork> selector;
  if (kind == PolicyKind::MVSelect) selector = requireSelector(r, o, regime);

  const ExperimentData data = buildData(r.config);
  const Dataset split = splitFor(data, o.split);
  const int glances = kind == PolicyKind::FullViews ? split.layout.activeCount() : r.config.train.glances;
  const PolicyResult result =
      runPolicy(kind, task, selector ? &*selector : nullptr, split, glances, r.config);

  const QNetwork shape = selector ? *selector : initialSelector(r.config, task.featureNet.outWidth(), r.config.seed);
  CostLedger cost = costAccount(costSpec(task, &shape), r.config.cameras(), glances);
  if (r.config.study.measureThroughput) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)runPolicy(kind, task, selector ? &*selector : nullptr, split, glances, r.config);
    cost.throughput.push_back(static_cast<double>(split.samples.size()) / secondsSince(t0));
  }
  json report = evalReport(r.config, result, cost, {r.config.seed});
  report["regime"] = regime;
  if (kind == PolicyKind::MVSelect) {
    const PolicyResult random = runPolicy(PolicyKind::Random, task, nullptr, split, glances, r.config);
    report["versus_random"] = toJson(
        comparePolicies(result, random, r.config.task, r.config.study.permutationRounds, r.config.seed));
    report["versus_random"]["random_metrics"] = toJson(random.metrics);
  }

  const std::string stem = (oracleOnly ? "oracle-" : "eval-") + policyName + "-" + regime + "-T" +
                           std::to_string(glances) + "-" + o.split;
  Manifest manifest(r, stem);
  if (manifest.exists() && !o.force)
    throw ConfigError("--force", manifest.path().string() + " already exists; pass --force to overwrite it");
  manifest.write("report", r.dir / "reports" / (stem + ".json"), report.dump(2) + "\n");
  manifest.write("frequency", r.dir / "reports" / (stem + "-frequency.csv"),
                 frequencyCsv(policyFrequency(result.episodes, r.config.cameras())));
  if (oracleOnly) {
    PolicyTable table = result.table;
    if (kind == PolicyKind::InstanceOracle) table.instanceLevel = result.episodes;
    table.glances = glances;
    table.split = o.split;
    manifest.write("policy-table", r.dir / "reports" / (stem + "-table.json"), table.toJson().dump(2) + "\n");
  }
  manifest.commit(secondsSince(start));
  std::cout << toString(kind) << " T=" << glances << " " << o.split << ": " << toJson(result.metrics).dump() << "\n";
  return 0;
}

int cmdStudy(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  Run r = openRun(o);
  const std::string study = o.study;
  if (study != "sweep-T" && study != "shutoff" && study != "random-pose" && study != "ablation")
    throw ConfigError("study", "expected sweep-T, shutoff, random-pose or ablation, got '" + study + "'");
  const std::string regime = o.regime.empty() ? "select-fixed" : o.regime;
  const TaskNetwork task = requireTask(r, o, regime == "joint" && o.taskCkpt.empty() ? "joint" : "task");
  std::optional<QNetwork> selector;
  if (study == "shutoff") selector = requireSelector(r, o, regime);

  Manifest manifest(r, "study-" + study);
  if (manifest.exists() && !o.force)
    throw ConfigError("--force", manifest.path().string() + " already exists; pass --force to overwrite it");

  json report{{"tool_version", kToolVersion}, {"study", study},          {"task", toString(r.config.task)},
              {"config_hash", r.configHash},  {"world_hash", r.worldHash}, {"seeds", {r.config.seed}}};
  const fs::path base = r.dir / "reports" / ("study-" + study);
  if (study == "random-pose") {
    report["result"] = toJson(randomPoseStudy(r.config, task));
  } else {
    const ExperimentData data = buildData(r.config);
    if (study == "sweep-T") {
      const SweepResult sweep = sweepT(r.config, data, task, r.config.study.tValues);
      report["result"] = toJson(sweep);
      manifest.write("curve", base.string() + ".csv", sweepCsv(sweep));
    } else if (study == "shutoff") {
      const int k = r.config.study.shutoffK < 0 ? r.config.cameras() / 2 : r.config.study.shutoffK;
      report["result"] = toJson(shutOffStudy(r.config, data, task, *selector, k));
    } else {
      report["result"] = toJson(ablationStudy(r.config, data, task));
    }
  }
  manifest.write("report", base.string() + ".json", report.dump(2) + "\n");
  manifest.commit(secondsSince(start));
  std::cout << report["result"].dump(2) << "\n";
  return 0;
}

void addCommon(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "override the run seed");
  cmd->add_option("--out", o.out, std::string("output root (default: $") + kOutEnv + ", then config output_dir)");
  cmd->add_option("--T", o.glances, "override the number of glances");
  cmd->add_flag("--force", o.force, "overwrite existing outputs");
  cmd->add_option("--task-ckpt", o.taskCkpt, "task network checkpoint");
  cmd->add_option("--selector-ckpt", o.selectorCkpt, "selector checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"View selection for multi-view perception: training, evaluation and studies"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train the task network, the selector, or both jointly");
  addCommon(train, o);
  train->add_option("--regime", o.regime, "task | select-fixed | joint")->default_str("task");

  auto* eval = app.add_subcommand("eval", "evaluate a policy and write an evaluation report");
  addCommon(eval, o);
  eval->add_option("--policy", o.policy, "mvselect | random | dataset-oracle | instance-oracle | full-views");
  eval->add_option("--regime", o.regime, "checkpoints to read: select-fixed | joint");
  eval->add_option("--split", o.split, "train | validation | test");

  auto* study = app.add_subcommand("study", "run a study: sweep-T | shutoff | random-pose | ablation");
  addCommon(study, o);
  study->add_option("study", o.study, "study name")->required();
  study->add_option("--regime", o.regime, "checkpoints to read: select-fixed | joint");

  auto* oracle = app.add_subcommand("oracle", "enumerate follow-up view sets and write the oracle policy table");
  addCommon(oracle, o);
  oracle->add_option("--policy", o.policy, "dataset-oracle | instance-oracle");
  oracle->add_option("--split", o.split, "train | validation | test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmdTrain(o);
    if (*eval) return cmdEval(o, false);
    if (*study) return cmdStudy(o);
    if (*oracle) return cmdEval(o, true);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CompatibilityError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return 3;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
