#pragma once

// Independent reference implementations used only by the tests. Deliberately
// naive: correctness over speed, no shared code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Triple-loop matrix product, row-major.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive class = untrustworthy (target 0); predicted positive when the
// credibility score is at or below the threshold.
inline Confusion confusion(const std::vector<double>& scores,
                           const std::vector<double>& targets, double zeta) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] <= zeta;
    const bool pos = targets[i] < 0.5;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1_at(const std::vector<double>& scores, const std::vector<double>& targets,
                    double zeta) {
  const Confusion c = confusion(scores, targets, zeta);
  const double p = c.tp + c.fp ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  const double r = c.tp + c.fn ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// Exhaustive threshold search over a dense 1e-4 grid on (0,1).
inline double best_f1_grid(const std::vector<double>& scores,
                           const std::vector<double>& targets) {
  double best = 0.0;
  for (int i = 1; i < 10000; ++i)
    best = std::max(best, f1_at(scores, targets, i * 1e-4));
  return best;
}

// O(n^2) Mann-Whitney AUC with ties counted half; positive = target 0,
// "correct" when the positive scores lower.
inline double auc(const std::vector<double>& scores, const std::vector<double>& targets) {
  double num = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (targets[i] >= 0.5) continue;  // want positives
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (targets[j] < 0.5) continue;
      ++pairs;
      if (scores[i] < scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

// BFS hop distances in an undirected {0,1} adjacency matrix.
inline std::vector<int> hop_distances(const std::vector<double>& adj, int n, int src) {
  std::vector<int> dist(n, -1);
  std::vector<int> queue{src};
  dist[src] = 0;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const int u = queue[q];
    for (int v = 0; v < n; ++v)
      if (v != u && adj[u * n + v] > 0.0 && dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
  }
  return dist;
}

}  // namespace oracle
