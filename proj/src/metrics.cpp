#include "mvselect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace mvsel {

double classificationAccuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("predictions and labels are not aligned");
  if (predictions.empty()) throw std::invalid_argument("accuracy of an empty set is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::vector<Peak> extractPeaks(const Tensor& heatmap, int height, int width, double threshold) {
  if (heatmap.size() != static_cast<std::size_t>(height * width))
    throw DimensionError("heatmap size does not match the grid");
  std::vector<Peak> peaks;
  auto at = [&](int r, int c) { return heatmap.data[static_cast<std::size_t>(r * width + c)]; };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double v = at(r, c);
      if (!(v > threshold)) continue;
      bool isMax = true;
      for (int dr = -1; dr <= 1 && isMax; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= height || cc >= width) continue;
          if (at(rr, cc) > v) {
            isMax = false;
            break;
          }
        }
      if (isMax) peaks.push_back({r, c, v});
    }
  return peaks;
}

DetectionMatchResult matchDetections(const std::vector<Peak>& peaks, const Tensor& occupancy, double thresholdCells) {
  std::vector<std::pair<int, int>> truth;
  for (std::size_t r = 0; r < occupancy.rows(); ++r)
    for (std::size_t c = 0; c < occupancy.cols(); ++c)
      if (occupancy(r, c) != 0.0) truth.emplace_back(static_cast<int>(r), static_cast<int>(c));

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t p = 0; p < peaks.size(); ++p)
    for (std::size_t g = 0; g < truth.size(); ++g) {
      const double d = std::hypot(peaks[p].row - truth[g].first, peaks[p].col - truth[g].second);
      if (d < thresholdCells) pairs.emplace_back(d, p, g);
    }
  std::sort(pairs.begin(), pairs.end());

  DetectionMatchResult m;
  m.gt = static_cast<int>(truth.size());
  std::vector<bool> usedPeak(peaks.size(), false);
  std::vector<bool> usedTruth(truth.size(), false);
  for (const auto& [d, p, g] : pairs) {
    if (usedPeak[p] || usedTruth[g]) continue;
    usedPeak[p] = true;
    usedTruth[g] = true;
    m.distances.push_back(d);
  }
  m.tp = static_cast<int>(m.distances.size());
  m.fp = static_cast<int>(peaks.size()) - m.tp;
  m.fn = m.gt - m.tp;
  return m;
}

DetectionMetrics detectionMetrics(const DetectionMatchResult& match, double thresholdCells) {
  if (match.gt == 0) throw std::domain_error("detection metrics are undefined for a frame without ground truth");
  DetectionMetrics out;
  out.moda = 1.0 - static_cast<double>(match.fp + match.fn) / match.gt;
  double quality = 0.0;
  for (double d : match.distances)
    if (d < thresholdCells) quality += 1.0 - d / thresholdCells;
  out.modp = match.tp > 0 ? quality / match.tp : 0.0;
  out.precision = match.tp + match.fp > 0 ? static_cast<double>(match.tp) / (match.tp + match.fp) : 0.0;
  out.recall = static_cast<double>(match.tp) / match.gt;
  return out;
}

Outcome& Outcome::operator+=(const Outcome& o) {
  episodes += o.episodes;
  correct += o.correct;
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  gt += o.gt;
  modpSum += o.modpSum;
  loss += o.loss;
  skippedFrames += o.skippedFrames;
  return *this;
}

Outcome Outcome::scaled(double f) const {
  return {episodes * f, correct * f, tp * f, fp * f, fn * f, gt * f, modpSum * f, loss * f, skippedFrames * f};
}

MetricBundle summarize(const Outcome& t, TaskKind kind) {
  MetricBundle m;
  m.kind = kind;
  m.episodes = t.episodes;
  m.skippedFrames = t.skippedFrames;
  if (kind == TaskKind::Classification) {
    m.accuracy = t.episodes > 0 ? t.correct / t.episodes : 0.0;
    return m;
  }
  if (t.gt > 0) {
    m.moda = 1.0 - (t.fp + t.fn) / t.gt;
    m.recall = t.tp / t.gt;
  }
  m.modp = t.tp > 0 ? t.modpSum / t.tp : 0.0;
  m.precision = t.tp + t.fp > 0 ? t.tp / (t.tp + t.fp) : 0.0;
  return m;
}

nlohmann::json toJson(const MetricBundle& m) {
  nlohmann::json j{{"episodes", m.episodes}};
  if (m.kind == TaskKind::Classification) {
    j["accuracy"] = m.accuracy;
  } else {
    j["moda"] = m.moda;
    j["modp"] = m.modp;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["skipped_frames"] = m.skippedFrames;
  }
  return j;
}

double matchThresholdCells(const Dataset& data, const EvalSettings& settings) {
  return settings.matchThresholdM / data.cellSizeM;
}

Outcome scorePrediction(const Tensor& prediction, const Sample& sample, const Dataset& data,
                        const EvalSettings& settings) {
  Outcome o;
  o.episodes = 1.0;
  if (data.kind == TaskKind::Classification) {
    o.correct = terminalReward(prediction, sample, TaskKind::Classification);
    o.loss = crossEntropyLoss(prediction, sample.label).loss;
    return o;
  }
  o.loss = bevLoss(prediction, sample.target).loss;
  const auto peaks = extractPeaks(prediction, data.height, data.width, settings.peakThreshold);
  const double thr = matchThresholdCells(data, settings);
  const auto match = matchDetections(peaks, sample.occupancy, thr);
  if (match.gt == 0) {
    o.skippedFrames = 1.0;
    return o;
  }
  o.tp = match.tp;
  o.fp = match.fp;
  o.fn = match.fn;
  o.gt = match.gt;
  for (double d : match.distances) o.modpSum += 1.0 - d / thr;
  return o;
}

double primaryContribution(const Outcome& o, TaskKind kind) {
  return kind == TaskKind::Classification ? o.correct : -(o.fp + o.fn);
}

CostSpec costSpec(const TaskNetwork& task, const QNetwork* selector) {
  return {task.featureNet.specs(), task.headNet.specs(), task.rowsPerView(), selector ? selector->macs() : 0};
}

std::size_t layerMacs(const std::vector<LayerSpec>& specs) {
  std::size_t m = 0;
  for (const auto& s : specs) m += s.in * s.out;
  return m;
}

CostLedger costAccount(const CostSpec& spec, int cameras, int glances) {
  if (glances < 1 || glances > cameras) throw std::invalid_argument("glance count must lie in [1, N]");
  CostLedger c;
  c.cameras = cameras;
  c.glances = glances;
  c.featurePerView = static_cast<double>(spec.rowsPerView * layerMacs(spec.feature));
  c.head = static_cast<double>(spec.rowsPerView * layerMacs(spec.head));
  c.selector = glances == cameras ? 0.0 : static_cast<double>(spec.selectorMacs);
  c.total = glances * c.featurePerView + c.head + (glances - 1) * c.selector;
  c.fullTotal = cameras * c.featurePerView + c.head;
  c.ratio = c.total / c.fullTotal;
  return c;
}

nlohmann::json toJson(const CostLedger& c) {
  nlohmann::json j{{"cameras", c.cameras},      {"glances", c.glances}, {"macs_f_per_view", c.featurePerView},
                   {"macs_g", c.head},          {"macs_d", c.selector}, {"macs_total", c.total},
                   {"macs_full_system", c.fullTotal}, {"cost_ratio", c.ratio}};
  if (!c.throughput.empty()) j["throughput_instances_per_s"] = c.throughput;
  return j;
}

PolicyFrequency policyFrequency(const std::vector<Episode>& episodes, int cameras) {
  PolicyFrequency f;
  f.cameras = cameras;
  for (const auto& e : episodes) f.steps = std::max(f.steps, static_cast<int>(e.sequence.size()));
  const auto N = static_cast<std::size_t>(cameras);
  f.frequency.assign(static_cast<std::size_t>(f.steps), std::vector<std::vector<double>>(N, std::vector<double>(N, 0.0)));
  f.usage.assign(N, 0.0);
  double selections = 0.0;
  for (const auto& e : episodes)
    for (std::size_t s = 0; s < e.sequence.size(); ++s) {
      f.frequency[s][static_cast<std::size_t>(e.initial)][static_cast<std::size_t>(e.sequence[s])] += 1.0;
      f.usage[static_cast<std::size_t>(e.sequence[s])] += 1.0;
      selections += 1.0;
    }
  for (auto& step : f.frequency)
    for (auto& row : step) {
      double total = 0.0;
      for (double v : row) total += v;
      if (total > 0)
        for (double& v : row) v /= total;
    }
  if (selections > 0)
    for (double& u : f.usage) u /= selections;
  return f;
}

nlohmann::json toJson(const PolicyFrequency& f) {
  return {{"cameras", f.cameras}, {"steps", f.steps}, {"frequency", f.frequency}, {"usage", f.usage}};
}

}  // namespace mvsel
