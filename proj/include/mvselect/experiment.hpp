#pragma once

// Experiment configuration, content hashing, checkpoints and atomic output.
//
// A config is one JSON document:
//   task        "classification" | "detection"            (required)
//   seed        run seed: network init, training, policies (required)
//   output_dir  default output root
//   world       world parameters and split sizes          (required)
//   network     task network and selector widths
//   train       TrainConfig keys                          (required)
//   eval        metric, oracle and study settings
// Unknown keys anywhere are rejected; errors name the dotted key path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvselect/envs.hpp"
#include "mvselect/metrics.hpp"
#include "mvselect/mvselect.hpp"
#include "mvselect/tasknet.hpp"
#include "mvselect/training.hpp"

namespace mvsel {

inline constexpr const char* kToolVersion = "1.0.0";

struct SplitSizes {
  std::size_t train = 1000;
  std::size_t validation = 200;
  std::size_t test = 500;
};

struct StudySettings {
  std::vector<int> tValues;  // empty: 1 .. N
  int shutoffK = -1;         // -1: N / 2
  int shutoffRandomSubsets = 5;
  bool retrainTaskForRandomPose = false;
  int randomDraws = 16;  // random policy draws when enumeration is over budget
  int permutationRounds = 20000;
  bool measureThroughput = false;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::Classification;
  std::uint64_t seed = 0;
  std::string outputDir = "runs";
  ClassificationConfig classification;
  DetectionConfig detection;
  SplitSizes sizes;
  TaskNetSpec taskNet;
  QNetSpec selector;
  TrainConfig train;
  EvalSettings eval;
  StudySettings study;

  int cameras() const { return task == TaskKind::Classification ? classification.cameras : detection.cameras; }
};

ExperimentConfig parseConfig(const nlohmann::json& doc);
ExperimentConfig loadConfig(const std::filesystem::path& path);
// Fully resolved config, every key present; canonical input for hashing.
nlohmann::json toJson(const ExperimentConfig& config);
nlohmann::json worldJson(const ExperimentConfig& config);

std::string sha256Hex(const std::string& bytes);
std::string configHash(const ExperimentConfig& config);
std::string worldHash(const ExperimentConfig& config);

struct ExperimentData {
  Dataset train;
  Dataset validation;
  Dataset test;
};

ExperimentData buildData(const ExperimentConfig& config);
TaskNetwork initialTaskNetwork(const ExperimentConfig& config, std::uint64_t seed);
QNetwork initialSelector(const ExperimentConfig& config, std::size_t featureDim, std::uint64_t seed,
                         std::optional<QNetSpec> spec = std::nullopt);

// Checkpoint container: "MVSC", u32 LE version, u64 LE header length, header
// JSON (layer specs, tensor names and shapes, metadata), then every tensor as
// little-endian f64 in header order.
std::string encodeCheckpoint(const TaskNetwork& net, const nlohmann::json& meta);
std::string encodeCheckpoint(const QNetwork& net, const nlohmann::json& meta);

struct DecodedCheckpoint {
  std::string kind;  // "task" | "selector"
  nlohmann::json meta;
  std::optional<TaskNetwork> task;
  std::optional<QNetwork> selector;
};

DecodedCheckpoint decodeCheckpoint(const std::string& bytes);
DecodedCheckpoint readCheckpoint(const std::filesystem::path& path);

// Throws CompatibilityError naming both hashes when the checkpoint was trained
// on a different world.
void checkWorld(const DecodedCheckpoint& ckpt, const std::string& expectedWorldHash);

void writeFileAtomic(const std::filesystem::path& path, const std::string& bytes);
std::string readFile(const std::filesystem::path& path);

// Stores bytes under <root>/objects/<sha256>.ckpt and returns the relative path.
std::string storeObject(const std::filesystem::path& root, const std::string& bytes);

}  // namespace mvsel
