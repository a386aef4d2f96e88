#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "gradient_cases.hpp"
#include "mvselect/mvselect.hpp"
#include "mvselect/training.hpp"
#include "support.hpp"
#include "toy_mdp.hpp"

using namespace mvsel;

namespace {

void zero(DenseNet& net) {
  for (auto& l : net.layers()) {
    std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
}

SelectionState stateOf(int n, std::vector<int> chosen, std::vector<Tensor> feats) {
  return buildState(n, chosen, feats);
}


}  // namespace

TEST_CASE("state construction examples") {
  const Tensor a = Tensor::row({1, 5}), b = Tensor::row({3, 2});
  CHECK(stateOf(4, {2}, {a}).camVector.data == std::vector<double>{0, 0, 1, 0});
  const SelectionState s = stateOf(4, {0, 2}, {a, b});
  CHECK(s.camVector.data == std::vector<double>{1, 0, 1, 0});
  CHECK(s.obsVector.data == std::vector<double>{3, 5});
  CHECK(s.chosen == std::vector<int>{0, 2});
  CHECK_THROWS(stateOf(4, {1, 1}, {a, b}));
  CHECK_THROWS(stateOf(4, {}, {}));
  CHECK_THROWS(stateOf(4, {4}, {a}));
  const std::vector<int> rep{1, 1};
  const std::vector<Tensor> fe{a, b};
  const SelectionState r = buildState(4, rep, fe, true);
  CHECK(r.camVector.data == std::vector<double>{0, 2, 0, 0});
}

TEST_CASE("state is invariant to the order of the chosen set") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> f(5, Tensor({1, 4}));
    for (auto& t : f) oracle::fillUniform(t, rng);
    std::vector<int> ids{0, 1, 2, 3, 4};
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(3);
    std::vector<int> perm{ids[2], ids[0], ids[1]};
    auto pick = [&](const std::vector<int>& c) {
      std::vector<Tensor> out;
      for (int i : c) out.push_back(f[static_cast<std::size_t>(i)]);
      return out;
    };
    const SelectionState x = stateOf(5, ids, pick(ids)), y = stateOf(5, perm, pick(perm));
    CHECK(x.camVector == y.camVector);
    CHECK(x.obsVector == y.obsVector);
    double total = 0.0;
    for (double v : x.camVector.data) total += v;
    CHECK(total == 3.0);
  }
}

TEST_CASE("detection state summary is the spatial mean of the pooled map") {
  const Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3, 2}, {6, 0, 0, 0, 0, 9});
  const std::vector<int> c{0, 1};
  const std::vector<Tensor> f{a, b};
  const SelectionState s = buildState(3, c, f);
  CHECK(s.obsVector.data[0] == doctest::Approx((6 + 3 + 5) / 3.0));
  CHECK(s.obsVector.data[1] == doctest::Approx((2 + 4 + 9) / 3.0));
}

TEST_CASE("Q-network output has one value per camera and is deterministic") {
  const QNetwork net(6, 4, {8, true, true}, 3);
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    Tensor f({1, 4});
    oracle::fillUniform(f, rng);
    const SelectionState s = stateOf(6, {t % 6}, {f});
    const Tensor q = qValues(net, s);
    CHECK(q.shape == std::vector<std::size_t>{1, 6});
    for (double v : q.data) CHECK(std::isfinite(v));
    CHECK(qValues(net, s) == q);
  }
  CHECK(QNetwork(6, 4, {8, true, true}, 3) == net);
}

TEST_CASE("ablation contracts hold exactly") {
  const Tensor f1 = Tensor::row({0.2, -0.4, 1.0}), f2 = Tensor::row({-1.0, 0.7, 0.3});
  const SelectionState s1 = stateOf(4, {1}, {f1}), s2 = stateOf(4, {1}, {f2}), s3 = stateOf(4, {3}, {f1});
  QNetwork noFeature(4, 3, {6, true, false}, 7);
  CHECK(qValues(noFeature, s1) == qValues(noFeature, s2));
  QNetwork noCamera(4, 3, {6, false, true}, 7);
  CHECK(qValues(noCamera, s1) == qValues(noCamera, s3));

  QNetwork zf(4, 3, {6, true, true}, 7);
  zero(zf.featureBranch);
  CHECK(qValues(zf, s1) == qValues(zf, s2));
  QNetwork zc(4, 3, {6, true, true}, 7);
  zero(zc.cameraBranch);
  CHECK(qValues(zc, s1) == qValues(zc, s3));
  CHECK(noFeature.macs() < zf.macs());
  CHECK(noCamera.macs() < zc.macs());
}

TEST_CASE("hand-traced two-branch sum") {
  QNetwork net(3, 2, {2, true, true}, 1);
  net.embeddings = Tensor({3, 2}, {1, 0, 0, 1, 1, 1});
  net.cameraBranch.layers()[0].weight = Tensor({2, 2}, {1, 0, 0, 1});
  net.cameraBranch.layers()[0].bias = Tensor({1, 2});
  net.featureBranch.layers()[0].weight = Tensor({2, 2}, {0, 1, 1, 0});
  net.featureBranch.layers()[0].bias = Tensor({1, 2}, {0, -1});
  net.combiner.layers()[0].weight = Tensor({2, 2}, {1, 0, 0, 1});
  net.combiner.layers()[0].bias = Tensor({1, 2});
  net.combiner.layers()[1].weight = Tensor({3, 2}, {1, 0, 0, 1, 1, -1});
  net.combiner.layers()[1].bias = Tensor({1, 3}, {0, 0, 0.5});
  // cameras {0, 2}: embedding sum [2, 1] -> relu [2, 1].
  // obs [3, 0.5]: swap -> [0.5, 3] + [0, -1] -> relu [0.5, 2].
  // sum [2.5, 3] -> relu [2.5, 3] -> [2.5, 3, 2.5 - 3 + 0.5].
  const SelectionState s = stateOf(3, {0, 2}, {Tensor::row({3, 0.5}), Tensor::row({1, 0})});
  CHECK(qValues(net, s).data == std::vector<double>{2.5, 3.0, 0.0});
}

TEST_CASE("action selection examples") {
  Rng rng(1);
  const std::vector<double> v{0.1, 0.9, 0.5};
  CHECK(selectAction(v, 0.0, {false, false, false}, rng) == 1);
  CHECK(selectAction(v, 0.0, {false, true, false}, rng) == 2);
  CHECK(selectAction(std::vector<double>{0.3, 0.3, 0.1}, 0.0, {false, false, false}, rng) == 0);
  CHECK_THROWS(selectAction(v, 0.0, {true, true, true}, rng));
  CHECK_THROWS(selectAction(v, 1.0, {true, true, true}, rng));
}

TEST_CASE("epsilon one draws uniformly among unmasked cameras") {
  Rng rng(99);
  const std::vector<double> v{0.0, 10.0, 0.0, 0.0};
  const std::vector<bool> mask{false, false, true, false};
  const int draws = 100000;
  std::map<int, int> counts;
  for (int i = 0; i < draws; ++i) ++counts[selectAction(v, 1.0, mask, rng)];
  CHECK(counts.count(2) == 0);
  const double p = 1.0 / 3.0, sigma = std::sqrt(draws * p * (1 - p));
  for (int c : {0, 1, 3}) CHECK(std::abs(counts[c] - draws * p) <= 3 * sigma);
}

TEST_CASE("action mask covers chosen and disabled cameras") {
  const SelectionState s = stateOf(4, {0, 2}, {Tensor::row({1}), Tensor::row({2})});
  CHECK(actionMask(s, {}, false) == std::vector<bool>{true, false, true, false});
  CHECK(actionMask(s, {false, false, false, true}, false) == std::vector<bool>{true, false, true, true});
  CHECK(actionMask(s, {}, true) == std::vector<bool>{false, false, false, false});
}

TEST_CASE("terminal rewards") {
  Sample c;
  c.label = 1;
  CHECK(terminalReward(Tensor::row({0.1, 2.0, -1.0}), c, TaskKind::Classification) == 1.0);
  CHECK(terminalReward(Tensor::row({3.1, 2.0, -1.0}), c, TaskKind::Classification) == 0.0);
  Sample d;
  d.occupancy = Tensor({2, 2});
  d.occupancy(0, 0) = 1.0;
  d.target = smoothedTarget(d.occupancy);
  CHECK(terminalReward(d.target, d, TaskKind::Detection) == 0.0);
  Tensor off = d.target;
  off.data[3] += 0.01;
  CHECK(terminalReward(off, d, TaskKind::Detection) < 0.0);
}

TEST_CASE("TD targets") {
  QNetwork net(3, 2, {2, true, true}, 1);
  // Combiner output fixed at [0.8, 0.2, -0.3] regardless of state.
  zero(net.combiner);
  net.combiner.layers()[1].bias = Tensor::row({0.8, 0.2, -0.3});
  Trajectory tr;
  const Tensor f = Tensor::row({1, 1});
  tr.states = {stateOf(3, {1}, {f}), stateOf(3, {1, 2}, {f, f}), stateOf(3, {1, 2, 0}, {f, f, f})};
  tr.actions = {2, 0};
  tr.rewards = {0.0, 1.0};
  tr.qTaken = {0.0, 0.0};
  tr.prediction = Tensor::row({0.0});
  const auto q = tdTargets(tr, net, 0.5);
  REQUIRE(q.size() == 2);
  // Camera 0 is the only unmasked action at s_2.
  CHECK(q[0] == doctest::Approx(0.4));
  CHECK(q[1] == 1.0);
  CHECK(tdTargets(tr, net, 0.0)[0] == 0.0);

  Trajectory partial = tr;
  partial.rewards.pop_back();
  CHECK_THROWS(tdTargets(partial, net, 0.5));

  // With repeats allowed the max ranges over every camera: 0.5 * 0.8 either way.
  tr.allowRepeats = true;
  CHECK(tdTargets(tr, net, 0.5)[0] == doctest::Approx(0.4));
  net.combiner.layers()[1].bias = Tensor::row({0.1, 0.9, -0.3});
  CHECK(tdTargets(tr, net, 0.5)[0] == doctest::Approx(0.45));
  tr.allowRepeats = false;
  CHECK(tdTargets(tr, net, 0.5)[0] == doctest::Approx(0.05));
}

TEST_CASE("RL loss values and gradients") {
  QNetwork net(3, 2, {2, true, true}, 1);
  zero(net.combiner);
  net.combiner.layers()[1].bias = Tensor::row({0.4, 0.1, 0.2});
  Trajectory tr;
  const Tensor f = Tensor::row({1, 1});
  tr.states = {stateOf(3, {1}, {f}), stateOf(3, {1, 0}, {f, f})};
  tr.actions = {0};
  tr.rewards = {1.0};
  tr.qTaken = {0.0};
  tr.prediction = Tensor::row({0.0});
  const RlLoss one = rlLoss(tr, {0.9}, net);
  CHECK(one.loss == doctest::Approx(0.25));
  CHECK(one.terms == 1);
  CHECK(rlLoss(tr, {0.4}, net).loss == 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    CHECK(gradcheck::rlCase(seed) < gradcheck::kTolerance);
  }
}

TEST_CASE("rollouts never repeat a camera") {
  ClassificationConfig cc;
  cc.cameras = 6;
  cc.classes = 4;
  cc.pairs = {{0, 1, {2, 3}}};
  const ClassificationWorld w(cc);
  const Dataset d = materialize(w, Split::Train, 10);
  const TaskNetwork task = TaskNetwork::classifier(cc.obsDim, cc.classes, {8, {8}, {}}, 1);
  const QNetwork q(6, 8, {8, true, true}, 2);
  Rng rng(4);
  for (const auto& s : d.samples)
    for (int init = 0; init < 6; ++init)
      for (double eps : {0.0, 0.5, 1.0}) {
        FeatureCache cache(task, s);
        RolloutOptions ro;
        ro.glances = 4;
        ro.epsilon = eps;
        const Trajectory t = rollout(q, task, s, cache, init, ro, rng);
        CHECK(t.complete());
        auto c = t.chosen();
        CHECK(c.size() == 4);
        CHECK(c.front() == init);
        std::sort(c.begin(), c.end());
        CHECK(std::adjacent_find(c.begin(), c.end()) == c.end());
        for (std::size_t k = 0; k + 1 < t.rewards.size(); ++k) CHECK(t.rewards[k] == 0.0);
      }
}

TEST_CASE("toy MDP: enumerated values are the TD fixed point and training finds the optimum") {
  toy::ToyMdp toy;
  const double r01 = toy.reward(0, 1), r02 = toy.reward(0, 2), r12 = toy.reward(1, 2);
  CHECK(r01 > r12);
  CHECK(r12 > r02);
  const std::map<int, int> best{{0, 1}, {1, 0}, {2, 1}};
  CHECK(toy.optimum() == best);
  auto r = [&](int a, int b) { return a + b == 1 ? r01 : (a + b == 2 ? r02 : r12); };

  // With T = 2 the enumerated Q(s_1(i), a) = R({i, a}) is exactly the target of
  // every trajectory through (i, a), so the fixed point is independent of Q.
  const QNetwork probe(3, 2, {4, true, true}, 9);
  const auto feats = extractAll(toy.task, toy.data.samples[0]);
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 3; ++a) {
      if (a == i) continue;
      Trajectory tr;
      const std::vector<int> c1{i}, c2{i, a};
      const std::vector<Tensor> f1{feats[static_cast<std::size_t>(i)]},
          f2{feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(a)]};
      tr.states = {buildState(3, c1, f1), buildState(3, c2, f2)};
      tr.actions = {a};
      tr.rewards = {r(i, a)};
      tr.qTaken = {0.0};
      tr.prediction = Tensor({1, 1});
      CHECK(tdTargets(tr, probe, 0.99) == std::vector<double>{r(i, a)});
    }

  TrainConfig tc;
  tc.regime = Regime::SelectFixed;
  tc.glances = 2;
  tc.selectorEpochs = 60;
  tc.batchSize = 1;
  tc.selectorLr = 1e-2;
  tc.seed = 3;
  const auto trained = trainSelectorFixed(toy.data, toy.task, QNetwork(3, 2, {8, true, true}, 5), tc);
  for (int i = 0; i < 3; ++i) {
    const std::vector<int> c{i};
    const std::vector<Tensor> f{feats[static_cast<std::size_t>(i)]};
    const SelectionState s = buildState(3, c, f);
    CAPTURE(i);
    CHECK(selectAction(trained.net, s, 0.0, actionMask(s, {}, false), 0) == best.at(i));
  }
}
