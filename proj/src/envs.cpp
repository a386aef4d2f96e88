#include "mvselect/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

namespace mvsel {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum StreamTag : std::uint64_t {
  kTagPrototypes = 1,
  kTagLabel = 2,
  kTagNoise = 3,
  kTagOccupancy = 4,
};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double wrapAngle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a;
}

// Signed difference in (-pi, pi].
double angleDiff(double a, double b) {
  double d = std::fmod(a - b, kTwoPi);
  if (d > std::numbers::pi) d -= kTwoPi;
  if (d <= -std::numbers::pi) d += kTwoPi;
  return d;
}

}  // namespace

std::string toString(TaskKind kind) { return kind == TaskKind::Classification ? "classification" : "detection"; }

std::string toString(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Validation:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

std::uint64_t streamSeed(std::uint64_t seed, std::uint64_t tag, Split split, std::uint64_t index) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ tag);
  h = splitmix(h ^ static_cast<std::uint64_t>(split));
  return splitmix(h ^ index);
}

CameraLayout::CameraLayout(std::vector<CameraPose> poses) : poses_(std::move(poses)), enabled_(poses_.size(), true) {
  if (poses_.size() < 2) throw ConfigError("world.cameras", "a layout needs at least 2 cameras");
}

std::vector<int> CameraLayout::activeCameras() const {
  std::vector<int> out;
  for (int c = 0; c < count(); ++c)
    if (enabled_[static_cast<std::size_t>(c)]) out.push_back(c);
  return out;
}

int CameraLayout::activeCount() const { return static_cast<int>(std::count(enabled_.begin(), enabled_.end(), true)); }

CameraLayout shutOffCameras(const CameraLayout& layout, const std::vector<int>& disabled, int minRemaining) {
  CameraLayout out = layout;
  for (int c : disabled) {
    if (c < 0 || c >= layout.count())
      throw std::out_of_range("camera " + std::to_string(c) + " is not part of the layout");
    out.enabled_[static_cast<std::size_t>(c)] = false;
  }
  const int needed = std::max(2, minRemaining);
  if (out.activeCount() < needed)
    throw std::invalid_argument("shutting off " + std::to_string(disabled.size()) + " cameras leaves " +
                                std::to_string(out.activeCount()) + " usable, need at least " +
                                std::to_string(needed));
  return out;
}

// ---------------------------------------------------------------------------
// Classification

ClassificationWorld::ClassificationWorld(ClassificationConfig config) : config_(std::move(config)) {
  const auto& c = config_;
  if (c.classes < 2) throw ConfigError("world.classes", "need at least 2 classes");
  if (c.cameras < 2) throw ConfigError("world.cameras", "need at least 2 cameras");
  if (c.obsDim < 1) throw ConfigError("world.obs_dim", "must be positive");
  if (c.noise < 0) throw ConfigError("world.noise", "must be non-negative");
  if (c.separation <= 0) throw ConfigError("world.separation", "must be positive");
  if (c.separation < 4.0 * c.noise)
    throw ConfigError("world.separation", "margin " + std::to_string(c.separation) +
                                              " is below 4x the noise level " + std::to_string(c.noise));

  std::vector<CameraPose> poses(static_cast<std::size_t>(c.cameras));
  for (int n = 0; n < c.cameras; ++n) poses[static_cast<std::size_t>(n)].angle = kTwoPi * n / c.cameras;
  layout_ = CameraLayout(std::move(poses));

  pairs_ = c.pairs;
  if (pairs_.empty()) {
    const int pairCount = c.classes / 2;
    if (c.cameras < pairCount)
      throw ConfigError("world.cameras", "default ambiguity layout needs at least one view per class pair");
    for (int p = 0; p < pairCount; ++p) pairs_.push_back({2 * p, 2 * p + 1, {}});
    for (int v = 0; v < c.cameras; ++v)
      pairs_[static_cast<std::size_t>(v * pairCount / c.cameras)].discriminativeViews.push_back(v);
  }
  std::set<int> seen;
  for (const auto& p : pairs_) {
    for (int cls : {p.classA, p.classB}) {
      if (cls < 0 || cls >= c.classes) throw ConfigError("world.ambiguous_pairs", "class id out of range");
      if (!seen.insert(cls).second)
        throw ConfigError("world.ambiguous_pairs", "class " + std::to_string(cls) + " appears in two pairs");
    }
    if (p.discriminativeViews.empty())
      throw ConfigError("world.ambiguous_pairs", "a pair needs at least one discriminative view");
    for (int v : p.discriminativeViews)
      if (v < 0 || v >= c.cameras) throw ConfigError("world.ambiguous_pairs", "view id out of range");
  }

  const auto D = static_cast<std::size_t>(c.obsDim);
  Rng rng(streamSeed(c.seed, kTagPrototypes, Split::Train, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randomVector = [&] {
    Tensor t({1, D});
    for (auto& v : t.data) v = normal(rng);
    return t;
  };
  prototypes_.assign(static_cast<std::size_t>(c.classes * c.cameras), Tensor());
  for (int cls = 0; cls < c.classes; ++cls) {
    if (pairOf(cls)) continue;
    for (int v = 0; v < c.cameras; ++v) prototypes_[index(cls, v)] = randomVector();
  }
  for (const auto& p : pairs_) {
    for (int v = 0; v < c.cameras; ++v) {
      Tensor base = randomVector();
      Tensor a = base;
      Tensor b = base;
      const bool discriminative =
          std::find(p.discriminativeViews.begin(), p.discriminativeViews.end(), v) != p.discriminativeViews.end();
      if (discriminative) {
        Tensor dir = randomVector();
        double norm = 0.0;
        for (double x : dir.data) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t d = 0; d < D; ++d) {
          const double offset = 0.5 * c.separation * dir.data[d] / norm;
          a.data[d] += offset;
          b.data[d] -= offset;
        }
      }
      prototypes_[index(p.classA, v)] = std::move(a);
      prototypes_[index(p.classB, v)] = std::move(b);
    }
  }
}

std::size_t ClassificationWorld::index(int classId, int view) const {
  return static_cast<std::size_t>(classId * config_.cameras + view);
}

std::optional<int> ClassificationWorld::pairOf(int classId) const {
  for (std::size_t p = 0; p < pairs_.size(); ++p)
    if (pairs_[p].classA == classId || pairs_[p].classB == classId) return static_cast<int>(p);
  return std::nullopt;
}

std::vector<int> ClassificationWorld::discriminativeViews(int classId) const {
  const auto p = pairOf(classId);
  if (!p) return {};
  return pairs_[static_cast<std::size_t>(*p)].discriminativeViews;
}

Tensor ClassificationWorld::prototype(int classId, double angle) const {
  const int n = config_.cameras;
  double u = wrapAngle(angle) / (kTwoPi / n);
  const double nearest = std::round(u);
  if (std::abs(u - nearest) < 1e-9) u = nearest;
  const double lower = std::floor(u);
  const double frac = u - lower;
  const int i0 = static_cast<int>(lower) % n;
  const int i1 = (i0 + 1) % n;
  if (frac == 0.0) return prototypes_[index(classId, i0)];
  Tensor out = prototypes_[index(classId, i0)];
  const Tensor& next = prototypes_[index(classId, i1)];
  for (std::size_t d = 0; d < out.size(); ++d) out.data[d] = (1.0 - frac) * out.data[d] + frac * next.data[d];
  return out;
}

ClassificationInstance ClassificationWorld::render(Split split, std::uint64_t idx, int classId, double pose) const {
  ClassificationInstance inst{split, idx, classId, pose, {}};
  Rng rng(streamSeed(config_.seed, kTagNoise, split, idx));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int n = 0; n < config_.cameras; ++n) {
    Tensor obs = prototype(classId, layout_.poses()[static_cast<std::size_t>(n)].angle - pose);
    for (auto& v : obs.data) v += config_.noise * noise(rng);
    inst.views.push_back(std::move(obs));
  }
  return inst;
}

ClassificationInstance ClassificationWorld::instance(Split split, std::uint64_t idx) const {
  Rng rng(streamSeed(config_.seed, kTagLabel, split, idx));
  std::uniform_int_distribution<int> label(0, config_.classes - 1);
  const int cls = label(rng);
  double pose = 0.0;
  if (config_.randomPose) pose = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
  return render(split, idx, cls, pose);
}

ClassificationInstance ClassificationWorld::withPose(const ClassificationInstance& inst, double pose) const {
  return render(inst.split, inst.index, inst.classId, pose);
}

ClassificationWorld makeClassificationWorld(const ClassificationConfig& config) { return ClassificationWorld(config); }

ClassificationInstance applyRandomPose(const ClassificationWorld& world, const ClassificationInstance& inst,
                                       std::uint64_t seed) {
  Rng rng(seed);
  const double pose = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
  return world.withPose(inst, pose);
}

// ---------------------------------------------------------------------------
// Detection

std::vector<CameraPose> defaultDetectionPoses(const DetectionConfig& c) {
  const double cx = 0.5 * c.width;
  const double cy = 0.5 * c.height;
  const double diag = std::hypot(static_cast<double>(c.width), static_cast<double>(c.height));
  const double radius = 0.5 * diag + 0.5;
  std::vector<CameraPose> poses;
  for (int k = 0; k < c.cameras; ++k) {
    // Small phase offset keeps camera rays off exact lattice corners.
    const double phi = kTwoPi * k / c.cameras + 0.05;
    CameraPose p;
    p.x = cx + radius * std::cos(phi);
    p.y = cy + radius * std::sin(phi);
    p.heading = wrapAngle(phi + std::numbers::pi);
    p.halfFov = 0.5 * c.fovDeg * std::numbers::pi / 180.0;
    p.range = c.rangeFraction * diag;
    poses.push_back(p);
  }
  return poses;
}

DetectionWorld::DetectionWorld(DetectionConfig config) : config_(std::move(config)) {
  auto& c = config_;
  if (c.height < 1 || c.width < 1) throw ConfigError("world.height", "grid dimensions must be positive");
  if (c.channels < 1) throw ConfigError("world.obs_dim", "must be positive");
  if (c.noise < 0) throw ConfigError("world.noise", "must be non-negative");
  if (c.minOccupants < 0 || c.maxOccupants < c.minOccupants || c.maxOccupants > c.height * c.width)
    throw ConfigError("world.min_occupants", "occupant bounds must satisfy 0 <= min <= max <= H*W");
  if (c.cellSizeM <= 0) throw ConfigError("world.cell_size_m", "must be positive");
  if (c.attenuation < 0 || c.attenuation >= 1) throw ConfigError("world.attenuation", "must lie in [0, 1)");
  if (c.poses.empty()) {
    if (c.cameras < 2) throw ConfigError("world.cameras", "need at least 2 cameras");
    c.poses = defaultDetectionPoses(c);
  }
  c.cameras = static_cast<int>(c.poses.size());
  layout_ = CameraLayout(c.poses);

  const auto H = static_cast<std::size_t>(c.height);
  const auto W = static_cast<std::size_t>(c.width);
  Tensor covered({H, W});
  for (const auto& pose : c.poses) {
    Tensor mask({H, W});
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t col = 0; col < W; ++col) {
        const double dx = static_cast<double>(col) + 0.5 - pose.x;
        const double dy = static_cast<double>(r) + 0.5 - pose.y;
        const bool inRange = std::hypot(dx, dy) <= pose.range;
        const bool inCone = std::abs(angleDiff(std::atan2(dy, dx), pose.heading)) <= pose.halfFov;
        if (inRange && inCone) {
          mask(r, col) = 1.0;
          covered(r, col) = 1.0;
        }
      }
    if (std::all_of(mask.data.begin(), mask.data.end(), [](double v) { return v == 1.0; }))
      throw ConfigError("world.cameras", "camera " + std::to_string(fov_.size()) + " covers the whole grid");
    fov_.push_back(std::move(mask));
  }
  coverage_ = std::accumulate(covered.data.begin(), covered.data.end(), 0.0) / static_cast<double>(H * W);
  if (coverage_ < c.minCoverage)
    throw ConfigError("world.min_coverage", "camera layout covers " + std::to_string(coverage_) +
                                                " of the grid, below the required " + std::to_string(c.minCoverage));
}

bool DetectionWorld::occluded(const Tensor& occupancy, int camera, int row, int col) const {
  const auto& pose = config_.poses[static_cast<std::size_t>(camera)];
  const double x0 = pose.x;
  const double y0 = pose.y;
  const double x1 = col + 0.5;
  const double y1 = row + 0.5;
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  int cx = static_cast<int>(std::floor(x0));
  int cy = static_cast<int>(std::floor(y0));
  const int stepX = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int stepY = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  double tMaxX = stepX == 0 ? inf : (stepX > 0 ? (cx + 1 - x0) : (x0 - cx)) / std::abs(dx);
  double tMaxY = stepY == 0 ? inf : (stepY > 0 ? (cy + 1 - y0) : (y0 - cy)) / std::abs(dy);
  const double tDeltaX = stepX == 0 ? inf : 1.0 / std::abs(dx);
  const double tDeltaY = stepY == 0 ? inf : 1.0 / std::abs(dy);
  const int H = config_.height;
  const int W = config_.width;
  // Amanatides-Woo traversal from the camera cell to the target cell.
  while (!(cx == col && cy == row)) {
    if (cx >= 0 && cx < W && cy >= 0 && cy < H && occupancy(static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)) != 0.0)
      return true;
    if (std::min(tMaxX, tMaxY) > 1.0) break;
    if (tMaxX < tMaxY) {
      cx += stepX;
      tMaxX += tDeltaX;
    } else {
      cy += stepY;
      tMaxY += tDeltaY;
    }
  }
  return false;
}

DetectionInstance DetectionWorld::render(const Tensor& occupancy, Split split, std::uint64_t idx) const {
  const auto H = static_cast<std::size_t>(config_.height);
  const auto W = static_cast<std::size_t>(config_.width);
  const auto C = static_cast<std::size_t>(config_.channels);
  if (occupancy.shape != std::vector<std::size_t>{H, W})
    throw DimensionError("occupancy shape " + shapeString(occupancy.shape) + " does not match the world grid");

  DetectionInstance inst;
  inst.split = split;
  inst.index = idx;
  inst.occupancy = occupancy;
  Rng rng(streamSeed(config_.seed, kTagNoise, split, idx));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int k = 0; k < config_.cameras; ++k) {
    Tensor vis({H, W});
    Tensor obs({H * W, C});
    const Tensor& fov = fov_[static_cast<std::size_t>(k)];
    const CameraPose& pose = config_.poses[static_cast<std::size_t>(k)];
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t col = 0; col < W; ++col) {
        bool visible = fov(r, col) != 0.0;
        if (visible && config_.occlusion)
          visible = !occluded(occupancy, k, static_cast<int>(r), static_cast<int>(col));
        const double dist = std::hypot(static_cast<double>(col) + 0.5 - pose.x, static_cast<double>(r) + 0.5 - pose.y);
        const double occ = occupancy(r, col) * (1.0 - config_.attenuation * std::min(1.0, dist / pose.range));
        for (std::size_t ch = 0; ch < C; ++ch) {
          // Always draw so the noise stream does not depend on visibility.
          const double eps = config_.noise * noise(rng);
          if (visible) obs.data[(r * W + col) * C + ch] = occ + eps;
        }
        vis(r, col) = visible ? 1.0 : 0.0;
      }
    inst.visibility.push_back(std::move(vis));
    inst.views.push_back(std::move(obs));
  }
  return inst;
}

DetectionInstance DetectionWorld::instance(Split split, std::uint64_t idx) const {
  const auto H = static_cast<std::size_t>(config_.height);
  const auto W = static_cast<std::size_t>(config_.width);
  Rng rng(streamSeed(config_.seed, kTagOccupancy, split, idx));
  const int count = std::uniform_int_distribution<int>(config_.minOccupants, config_.maxOccupants)(rng);
  std::vector<std::size_t> cells(H * W);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  Tensor occupancy({H, W});
  for (int i = 0; i < count; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), cells.size() - 1)(rng);
    std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
    occupancy.data[cells[static_cast<std::size_t>(i)]] = 1.0;
  }
  return render(occupancy, split, idx);
}

DetectionWorld makeDetectionWorld(const DetectionConfig& config) { return DetectionWorld(config); }

nlohmann::json toJson(const ClassificationInstance& inst) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : inst.views) views.push_back(v.data);
  return {{"split", toString(inst.split)}, {"index", inst.index}, {"class", inst.classId},
          {"pose", inst.pose},             {"views", views}};
}

nlohmann::json toJson(const DetectionInstance& inst) {
  const std::size_t H = inst.occupancy.shape[0];
  const std::size_t W = inst.occupancy.shape[1];
  nlohmann::json occupants = nlohmann::json::array();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      if (inst.occupancy(r, c) != 0.0) occupants.push_back({r, c});
  nlohmann::json visible = nlohmann::json::array();
  for (const auto& vis : inst.visibility) {
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if (vis(r, c) != 0.0 && inst.occupancy(r, c) != 0.0) cells.push_back({r, c});
    visible.push_back(cells);
  }
  return {{"split", toString(inst.split)}, {"index", inst.index},           {"grid", {H, W}},
          {"occupants", occupants},        {"visible_occupants", visible}};
}

}  // namespace mvsel
