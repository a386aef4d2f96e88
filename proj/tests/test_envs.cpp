#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "mvselect/envs.hpp"
#include "support.hpp"

using namespace mvsel;

namespace {

ClassificationConfig pairWorld() {
  ClassificationConfig c;
  c.classes = 2;
  c.cameras = 4;
  c.obsDim = 8;
  c.noise = 0.5;
  c.separation = 4.0;
  c.pairs = {{0, 1, {1, 3}}};
  c.seed = 3;
  return c;
}

DetectionConfig smallDetection() {
  DetectionConfig c;
  c.cameras = 4;
  c.height = 12;
  c.width = 12;
  c.channels = 3;
  c.minOccupants = 4;
  c.maxOccupants = 12;
  c.seed = 5;
  return c;
}

double distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("designed pair coincides on ambiguous views and separates on discriminative ones") {
  const ClassificationWorld w(pairWorld());
  for (int v : {0, 2}) CHECK(w.prototypeAtView(0, v) == w.prototypeAtView(1, v));
  for (int v : {1, 3}) CHECK(distance(w.prototypeAtView(0, v), w.prototypeAtView(1, v)) >= 4.0 - 1e-12);
  CHECK(w.discriminativeViews(0) == std::vector<int>{1, 3});
}

TEST_CASE("default ambiguity layout gives every pair a contiguous block of views") {
  ClassificationConfig c;
  c.seed = 1;
  const ClassificationWorld w(c);
  REQUIRE(w.pairs().size() == 5);
  std::vector<int> owner(12, -1);
  for (std::size_t p = 0; p < w.pairs().size(); ++p) {
    CHECK_FALSE(w.pairs()[p].discriminativeViews.empty());
    for (int v : w.pairs()[p].discriminativeViews) {
      CHECK(owner[static_cast<std::size_t>(v)] == -1);
      owner[static_cast<std::size_t>(v)] = static_cast<int>(p);
    }
  }
  for (int o : owner) CHECK(o >= 0);
  for (std::size_t v = 1; v < 12; ++v) CHECK(owner[v] >= owner[v - 1]);
}

TEST_CASE("instance streams are deterministic and split-keyed") {
  const ClassificationWorld a(pairWorld()), b(pairWorld());
  for (std::uint64_t i = 0; i < 20; ++i) CHECK(a.instance(Split::Train, i) == b.instance(Split::Train, i));
  CHECK_FALSE(a.instance(Split::Train, 0).views == a.instance(Split::Test, 0).views);
  const DetectionWorld d1(smallDetection()), d2(smallDetection());
  for (std::uint64_t i = 0; i < 5; ++i) CHECK(d1.instance(Split::Validation, i) == d2.instance(Split::Validation, i));
  CHECK(toJson(d1.instance(Split::Test, 2)).dump() == toJson(d2.instance(Split::Test, 2)).dump());
}

TEST_CASE("ambiguous views alone leave the designed pair at chance") {
  // Nearest-prototype classifier on the generator's own noise model.
  const ClassificationWorld w(pairWorld());
  int correct = 0, total = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto inst = w.instance(Split::Test, i);
    double d0 = 0.0, d1 = 0.0;
    for (int v : {0, 2}) {
      d0 += std::pow(distance(inst.views[static_cast<std::size_t>(v)], w.prototypeAtView(0, v)), 2);
      d1 += std::pow(distance(inst.views[static_cast<std::size_t>(v)], w.prototypeAtView(1, v)), 2);
    }
    const int guess = d1 < d0 ? 1 : 0;
    correct += guess == inst.classId;
    ++total;
  }
  const double acc = static_cast<double>(correct) / total;
  // Ties always resolve to class 0, so accuracy is the class-0 share: 0.5 plus 3 sigma.
  CHECK(acc <= 0.5 + 3 * std::sqrt(0.25 / total));
}

TEST_CASE("all noise-free views separate every class") {
  ClassificationConfig c;
  c.seed = 9;
  const ClassificationWorld w(c);
  for (int cls = 0; cls < c.classes; ++cls) {
    int best = -1;
    double bestD = 1e300;
    for (int other = 0; other < c.classes; ++other) {
      double d = 0.0;
      for (int v = 0; v < c.cameras; ++v) d += std::pow(distance(w.prototypeAtView(cls, v), w.prototypeAtView(other, v)), 2);
      if (other != cls) CHECK(d > 0.0);
      if (d < bestD) bestD = d, best = other;
    }
    CHECK(best == cls);
  }
}

TEST_CASE("classification config errors name the key") {
  ClassificationConfig c = pairWorld();
  c.classes = 1;
  CHECK_THROWS_AS(ClassificationWorld{c}, ConfigError);
  c = pairWorld();
  c.noise = 2.0;  // margin 4 < 4 * noise
  try {
    ClassificationWorld w(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "world.separation");
  }
}

TEST_CASE("random pose: zero offset is the identity and a camera step shifts the views") {
  ClassificationConfig c = pairWorld();
  c.noise = 0.0;
  const ClassificationWorld w(c);
  const auto inst = w.instance(Split::Train, 4);
  CHECK(w.withPose(inst, 0.0) == inst);
  const double step = 2 * std::numbers::pi / c.cameras;
  const auto shifted = w.withPose(inst, step);
  for (int n = 0; n < c.cameras; ++n) {
    const auto& got = shifted.views[static_cast<std::size_t>(n)];
    const auto& want = inst.views[static_cast<std::size_t>((n + c.cameras - 1) % c.cameras)];
    for (std::size_t d = 0; d < got.size(); ++d) CHECK(got.data[d] == doctest::Approx(want.data[d]).epsilon(1e-12));
  }
  const auto full = w.withPose(inst, 2 * std::numbers::pi);
  for (std::size_t n = 0; n < inst.views.size(); ++n)
    for (std::size_t d = 0; d < inst.views[n].size(); ++d)
      CHECK(full.views[n].data[d] == doctest::Approx(inst.views[n].data[d]).epsilon(1e-12));
  const auto posed = applyRandomPose(w, inst, 77);
  CHECK(posed.classId == inst.classId);
  CHECK(posed == applyRandomPose(w, inst, 77));
}

TEST_CASE("detection coverage: union meets the floor and no camera sees everything") {
  const DetectionWorld w(smallDetection());
  CHECK(w.coverage() >= smallDetection().minCoverage);
  for (int k = 0; k < w.layout().count(); ++k) {
    const Tensor& m = w.fovMask(k);
    CHECK(std::any_of(m.data.begin(), m.data.end(), [](double v) { return v == 0.0; }));
  }
  DetectionConfig narrow = smallDetection();
  narrow.fovDeg = 20;
  CHECK_THROWS_AS(DetectionWorld{narrow}, ConfigError);
}

TEST_CASE("occupancy stays within the density bounds and views vanish outside visibility") {
  const DetectionWorld w(smallDetection());
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto inst = w.instance(Split::Train, i);
    double count = 0;
    for (double v : inst.occupancy.data) {
      CHECK((v == 0.0 || v == 1.0));
      count += v;
    }
    CHECK(count >= 4);
    CHECK(count <= 12);
    for (std::size_t k = 0; k < inst.views.size(); ++k)
      for (std::size_t cell = 0; cell < inst.visibility[k].size(); ++cell)
        if (inst.visibility[k].data[cell] == 0.0)
          for (std::size_t ch = 0; ch < 3; ++ch) CHECK(inst.views[k].data[cell * 3 + ch] == 0.0);
  }
}

TEST_CASE("visibility matches an independent cone, range and slab-test ray caster") {
  const DetectionWorld w(smallDetection());
  std::size_t checked = 0;
  for (std::uint64_t i = 0; i < 15; ++i) {
    const auto inst = w.instance(Split::Test, i);
    for (int k = 0; k < w.layout().count(); ++k)
      for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) {
          const bool want = oracle::visible(w.config().poses[static_cast<std::size_t>(k)], inst.occupancy, r, c, true);
          CHECK(inst.visibility[static_cast<std::size_t>(k)](static_cast<std::size_t>(r), static_cast<std::size_t>(c)) ==
                (want ? 1.0 : 0.0));
          ++checked;
        }
  }
  CHECK(checked == 15 * 4 * 144);
}

TEST_CASE("an occupant hidden behind another is seen by a side camera") {
  DetectionConfig c = smallDetection();
  c.noise = 0.0;
  const DetectionWorld w(c);
  // Find a camera and a pair of cells on one of its rays, with a second camera
  // seeing the far cell when only the pair is occupied.
  bool found = false;
  for (int k = 0; k < 4 && !found; ++k)
    for (int r = 0; r < 12 && !found; ++r)
      for (int col = 0; col < 12 && !found; ++col) {
        Tensor occ({12, 12});
        occ(static_cast<std::size_t>(r), static_cast<std::size_t>(col)) = 1.0;
        if (!oracle::visible(w.config().poses[static_cast<std::size_t>(k)], occ, r, col, true))
          continue;
        for (int r2 = 0; r2 < 12 && !found; ++r2)
          for (int c2 = 0; c2 < 12 && !found; ++c2) {
            if (r2 == r && c2 == col) continue;
            Tensor both = occ;
            both(static_cast<std::size_t>(r2), static_cast<std::size_t>(c2)) = 1.0;
            const auto& pose = w.config().poses[static_cast<std::size_t>(k)];
            if (!oracle::segmentCrossesCell(pose.x, pose.y, col + 0.5, r + 0.5, c2, r2)) continue;
            const auto inst = w.render(both, Split::Test, 0);
            if (inst.visibility[static_cast<std::size_t>(k)](static_cast<std::size_t>(r), static_cast<std::size_t>(col)) != 0.0)
              continue;
            for (int side = 0; side < 4; ++side)
              if (side != k && inst.visibility[static_cast<std::size_t>(side)](static_cast<std::size_t>(r), static_cast<std::size_t>(col)) == 1.0) {
                CHECK(inst.views[static_cast<std::size_t>(side)].data[static_cast<std::size_t>(r * 12 + col) * 3] == 1.0);
                CHECK(inst.views[static_cast<std::size_t>(k)].data[static_cast<std::size_t>(r * 12 + col) * 3] == 0.0);
                found = true;
                break;
              }
          }
      }
  CHECK(found);
}

TEST_CASE("an occupant outside every field of view leaves all maps empty there") {
  DetectionConfig c = smallDetection();
  c.minCoverage = 0.1;
  c.fovDeg = 40;
  c.rangeFraction = 0.4;
  const DetectionWorld w(c);
  int uncovered = -1;
  for (int cell = 0; cell < 144 && uncovered < 0; ++cell) {
    bool seen = false;
    for (int k = 0; k < 4; ++k) seen = seen || w.fovMask(k).data[static_cast<std::size_t>(cell)] != 0.0;
    if (!seen) uncovered = cell;
  }
  REQUIRE(uncovered >= 0);
  Tensor occ({12, 12});
  occ.data[static_cast<std::size_t>(uncovered)] = 1.0;
  const auto inst = w.render(occ, Split::Train, 0);
  CHECK(inst.occupancy.data[static_cast<std::size_t>(uncovered)] == 1.0);
  for (int k = 0; k < 4; ++k)
    for (std::size_t ch = 0; ch < 3; ++ch)
      CHECK(inst.views[static_cast<std::size_t>(k)].data[static_cast<std::size_t>(uncovered) * 3 + ch] == 0.0);
}

TEST_CASE("occupants invisible to every camera are exactly those no mask reaches") {
  const DetectionWorld w(smallDetection());
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto inst = w.instance(Split::Train, i);
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) {
        if (inst.occupancy(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) == 0.0) continue;
        bool anyMask = false, anyOracle = false;
        for (int k = 0; k < 4; ++k) {
          anyMask = anyMask || inst.visibility[static_cast<std::size_t>(k)](static_cast<std::size_t>(r), static_cast<std::size_t>(c)) != 0.0;
          anyOracle = anyOracle || oracle::visible(w.config().poses[static_cast<std::size_t>(k)], inst.occupancy, r, c, true);
        }
        CHECK(anyMask == anyOracle);
      }
  }
}

TEST_CASE("camera shut-off") {
  ClassificationConfig c;
  const ClassificationWorld w(c);
  CHECK(shutOffCameras(w.layout(), {}) == w.layout());
  const CameraLayout half = shutOffCameras(w.layout(), {0, 2, 4, 6, 8, 10});
  CHECK(half.activeCount() == 6);
  CHECK(half.activeCameras() == std::vector<int>{1, 3, 5, 7, 9, 11});
  CHECK_THROWS(shutOffCameras(w.layout(), {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  CHECK_THROWS(shutOffCameras(w.layout(), {0, 1, 2, 3, 4, 5, 6, 7, 8}, 4));
  CHECK_THROWS(shutOffCameras(w.layout(), {12}));
}
