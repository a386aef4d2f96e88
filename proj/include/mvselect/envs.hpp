#pragma once

// Synthetic multiview worlds with fixed camera layouts.
//
// ClassificationWorld: N cameras on a ring around an object. Each (class, view)
// pair has a prototype vector; designated class pairs share prototypes on some
// views (ambiguous) and differ by a configured margin on others
// (discriminative). Observations are prototype + i.i.d. Gaussian noise.
//
// DetectionWorld: an H x W bird's-eye-view grid with point occupants watched by
// N cameras, each with a position, heading, angular field of view and range.
// A camera observes a cell when the cell centre lies inside its cone and range
// and no other occupant blocks the straight segment between them.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvselect/numcore.hpp"

namespace mvsel {

enum class TaskKind { Classification, Detection };
enum class Split { Train, Validation, Test };

std::string toString(TaskKind kind);
std::string toString(Split split);

// Mixes (seed, stream tag, split, index) into one 64-bit RNG seed.
std::uint64_t streamSeed(std::uint64_t seed, std::uint64_t tag, Split split, std::uint64_t index);

struct CameraPose {
  double angle = 0.0;  // ring position (classification), radians
  // Detection cameras, in grid cell units: x runs along columns, y along rows.
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians
  double halfFov = 0.0;  // radians
  double range = 0.0;

  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

// Fixed camera layout. Cameras can be shut off, which removes them from the
// selection action space without touching the world's instances.
class CameraLayout {
 public:
  CameraLayout() = default;
  explicit CameraLayout(std::vector<CameraPose> poses);

  int count() const noexcept { return static_cast<int>(poses_.size()); }
  const std::vector<CameraPose>& poses() const noexcept { return poses_; }
  bool enabled(int camera) const { return enabled_.at(static_cast<std::size_t>(camera)); }
  const std::vector<bool>& enabledMask() const noexcept { return enabled_; }
  std::vector<int> activeCameras() const;
  int activeCount() const;

  friend bool operator==(const CameraLayout&, const CameraLayout&) = default;

 private:
  friend CameraLayout shutOffCameras(const CameraLayout&, const std::vector<int>&, int);
  std::vector<CameraPose> poses_;
  std::vector<bool> enabled_;
};

// Disables `disabled` cameras. Throws if fewer than max(2, minRemaining) stay on.
CameraLayout shutOffCameras(const CameraLayout& layout, const std::vector<int>& disabled, int minRemaining = 2);

// ---------------------------------------------------------------------------
// Classification

struct AmbiguousPair {
  int classA = 0;
  int classB = 1;
  std::vector<int> discriminativeViews;
};

struct ClassificationConfig {
  int classes = 10;
  int cameras = 12;
  int obsDim = 32;
  double noise = 0.3;
  double separation = 4.0;
  // Empty: classes (2p, 2p+1) are paired and the ring is split into one
  // contiguous block of discriminative views per pair.
  std::vector<AmbiguousPair> pairs;
  bool randomPose = false;
  std::uint64_t seed = 0;
};

struct ClassificationInstance {
  Split split = Split::Train;
  std::uint64_t index = 0;
  int classId = 0;
  double pose = 0.0;
  std::vector<Tensor> views;  // N tensors of shape [1, obsDim]

  friend bool operator==(const ClassificationInstance&, const ClassificationInstance&) = default;
};

class ClassificationWorld {
 public:
  explicit ClassificationWorld(ClassificationConfig config);

  const ClassificationConfig& config() const noexcept { return config_; }
  const CameraLayout& layout() const noexcept { return layout_; }
  const std::vector<AmbiguousPair>& pairs() const noexcept { return pairs_; }

  // Pure function of (config, split, index).
  ClassificationInstance instance(Split split, std::uint64_t index) const;
  // Re-renders the instance at object rotation `pose` with the same noise draw.
  ClassificationInstance withPose(const ClassificationInstance& inst, double pose) const;

  // Noise-free observation of class `classId` seen from ring angle `angle`.
  Tensor prototype(int classId, double angle) const;
  Tensor prototypeAtView(int classId, int view) const { return prototypes_[index(classId, view)]; }

  // Views on which the pair containing `classId` is distinguishable; empty when
  // the class belongs to no designed pair.
  std::vector<int> discriminativeViews(int classId) const;
  std::optional<int> pairOf(int classId) const;

 private:
  std::size_t index(int classId, int view) const;
  ClassificationInstance render(Split split, std::uint64_t index, int classId, double pose) const;

  ClassificationConfig config_;
  CameraLayout layout_;
  std::vector<AmbiguousPair> pairs_;
  std::vector<Tensor> prototypes_;  // [class * N + view]
};

ClassificationWorld makeClassificationWorld(const ClassificationConfig& config);

// Draws a uniform pose in [0, 2*pi) from `seed` and re-renders the instance.
ClassificationInstance applyRandomPose(const ClassificationWorld& world, const ClassificationInstance& inst,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Detection

struct DetectionConfig {
  int cameras = 6;
  int height = 32;
  int width = 32;
  int channels = 16;
  double noise = 0.1;
  int minOccupants = 5;
  int maxOccupants = 20;
  bool occlusion = true;
  double minCoverage = 0.95;
  double cellSizeM = 0.25;
  // Occupant signal falls linearly from 1 at the camera to 1 - attenuation at its range.
  double attenuation = 0.0;
  // Defaults for generated poses: cameras evenly spaced on a circle around the
  // grid, looking at its centre.
  double fovDeg = 110.0;
  double rangeFraction = 1.0;  // of the grid diagonal
  std::vector<CameraPose> poses;  // explicit layout; overrides the generated one
  std::uint64_t seed = 0;
};

struct DetectionInstance {
  Split split = Split::Train;
  std::uint64_t index = 0;
  Tensor occupancy;                // [H, W], entries 0/1
  std::vector<Tensor> visibility;  // per camera [H, W], 1 where the camera sees the cell
  std::vector<Tensor> views;       // per camera [H*W, channels], zero outside visibility

  friend bool operator==(const DetectionInstance&, const DetectionInstance&) = default;
};

class DetectionWorld {
 public:
  explicit DetectionWorld(DetectionConfig config);

  const DetectionConfig& config() const noexcept { return config_; }
  const CameraLayout& layout() const noexcept { return layout_; }

  DetectionInstance instance(Split split, std::uint64_t index) const;
  // Builds an instance from an explicit occupancy grid (noise keyed by split/index).
  DetectionInstance render(const Tensor& occupancy, Split split, std::uint64_t index) const;

  // Cone-and-range mask of one camera, ignoring occlusion.
  const Tensor& fovMask(int camera) const { return fov_.at(static_cast<std::size_t>(camera)); }
  double coverage() const noexcept { return coverage_; }
  // True when some occupied cell other than the target lies on the segment
  // from the camera to the centre of cell (row, col).
  bool occluded(const Tensor& occupancy, int camera, int row, int col) const;

 private:
  DetectionConfig config_;
  CameraLayout layout_;
  std::vector<Tensor> fov_;
  double coverage_ = 0.0;
};

DetectionWorld makeDetectionWorld(const DetectionConfig& config);
std::vector<CameraPose> defaultDetectionPoses(const DetectionConfig& config);

nlohmann::json toJson(const ClassificationInstance& inst);
nlohmann::json toJson(const DetectionInstance& inst);

}  // namespace mvsel
