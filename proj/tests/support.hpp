#pragma once

// Independent reference routines shared by the test suites. Nothing here calls
// into the library code it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "mvselect/envs.hpp"
#include "mvselect/numcore.hpp"
#include "mvselect/tasknet.hpp"

namespace oracle {

using mvsel::Tensor;

inline std::vector<double> matvec(const Tensor& w, const std::vector<double>& x) {
  const std::size_t out = w.shape[0], in = w.shape[1];
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) y[o] += w.data[o * in + i] * x[i];
  return y;
}

inline double activate(mvsel::Activation act, double v) {
  switch (act) {
    case mvsel::Activation::Linear: return v;
    case mvsel::Activation::Relu: return v > 0 ? v : 0.0;
    case mvsel::Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-v));
    case mvsel::Activation::Tanh: return std::tanh(v);
  }
  return v;
}

// Row-by-row forward pass with explicit loops.
inline Tensor forward(const mvsel::DenseNet& net, const Tensor& input) {
  const std::size_t rows = input.shape[0];
  std::vector<std::vector<double>> cur(rows);
  for (std::size_t r = 0; r < rows; ++r)
    cur[r].assign(input.data.begin() + static_cast<long>(r * input.shape[1]),
                  input.data.begin() + static_cast<long>((r + 1) * input.shape[1]));
  for (const auto& layer : net.layers())
    for (auto& row : cur) {
      auto y = matvec(layer.weight, row);
      for (std::size_t o = 0; o < y.size(); ++o) y[o] = activate(layer.act, y[o] + layer.bias.data[o]);
      row = std::move(y);
    }
  Tensor out({rows, cur.empty() ? 0 : cur[0].size()});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(cur[r].begin(), cur[r].end(), out.data.begin() + static_cast<long>(r * out.shape[1]));
  return out;
}

// Central differences, written separately from the library's checker.
inline std::vector<double> centralDifference(const std::function<double()>& f, std::vector<double*> params,
                                             double h = 1e-5) {
  std::vector<double> g;
  g.reserve(params.size());
  for (double* p : params) {
    const double keep = *p;
    *p = keep + h;
    const double up = f();
    *p = keep - h;
    const double down = f();
    *p = keep;
    g.push_back((up - down) / (2 * h));
  }
  return g;
}

inline double relativeError(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline double maxRelative(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relativeError(a[i], n[i], floor));
  return worst;
}

inline void fillUniform(Tensor& t, mvsel::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
}

// Segment from (x0, y0) to (x1, y1) against the open unit square at (cx, cy):
// true when the overlap has positive length.
inline bool segmentCrossesCell(double x0, double y0, double x1, double y1, int cx, int cy) {
  double lo = 0.0, hi = 1.0;
  const double d[2] = {x1 - x0, y1 - y0};
  const double o[2] = {x0, y0};
  const double mins[2] = {static_cast<double>(cx), static_cast<double>(cy)};
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] <= mins[a] || o[a] >= mins[a] + 1) return false;
      continue;
    }
    double t0 = (mins[a] - o[a]) / d[a];
    double t1 = (mins[a] + 1 - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  return hi - lo > 1e-9;
}

// Visibility of cell (row, col) from a camera: inside the cone and range, and
// no other occupied cell on the way to the cell centre.
inline bool visible(const mvsel::CameraPose& pose, const Tensor& occupancy, int row, int col, bool occlusion) {
  const double x = col + 0.5, y = row + 0.5;
  const double dx = x - pose.x, dy = y - pose.y;
  if (std::sqrt(dx * dx + dy * dy) > pose.range) return false;
  const double hx = std::cos(pose.heading), hy = std::sin(pose.heading);
  const double cosAngle = (dx * hx + dy * hy) / std::sqrt(dx * dx + dy * dy);
  if (cosAngle < std::cos(pose.halfFov) - 1e-12) return false;
  if (!occlusion) return true;
  const int H = static_cast<int>(occupancy.shape[0]), W = static_cast<int>(occupancy.shape[1]);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      if ((r == row && c == col) || occupancy.data[static_cast<std::size_t>(r * W + c)] == 0.0) continue;
      if (segmentCrossesCell(pose.x, pose.y, x, y, c, r)) return false;
    }
  return true;
}

struct Counts {
  int tp = 0, fp = 0, fn = 0;
};

// Maximum-cardinality one-to-one matching under a strict distance threshold,
// by exhaustive search over assignments of predictions to ground truth.
inline Counts bruteForceMatch(const std::vector<std::pair<double, double>>& pred,
                              const std::vector<std::pair<double, double>>& gt, double threshold) {
  int best = 0;
  std::vector<bool> used(gt.size(), false);
  std::function<void(std::size_t, int)> rec = [&](std::size_t p, int matched) {
    if (p == pred.size()) {
      best = std::max(best, matched);
      return;
    }
    rec(p + 1, matched);
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g]) continue;
      if (std::hypot(pred[p].first - gt[g].first, pred[p].second - gt[g].second) >= threshold) continue;
      used[g] = true;
      rec(p + 1, matched + 1);
      used[g] = false;
    }
  };
  rec(0, 0);
  return {best, static_cast<int>(pred.size()) - best, static_cast<int>(gt.size()) - best};
}

// Multiply-accumulates of a layer chain: sum of in * out.
inline double macs(const std::vector<mvsel::LayerSpec>& specs) {
  double m = 0.0;
  for (const auto& s : specs) m += static_cast<double>(s.in) * static_cast<double>(s.out);
  return m;
}

inline std::vector<std::vector<int>> combinations(const std::vector<int>& pool, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (std::size_t i = start; i < pool.size(); ++i) {
      cur.push_back(pool[i]);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return out;
}

}  // namespace oracle
