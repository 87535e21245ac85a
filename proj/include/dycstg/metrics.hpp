#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "dycstg/errors.hpp"

namespace dycstg {

// Evaluation treats the *untrustworthy* class as positive: an anomaly that we
// flag is a true positive. Inputs: credibility scores y in [0,1] (higher =
// more trustworthy), binary targets (1 = trustworthy), threshold zeta.
struct Metrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when tp+fp == 0
  double recall = 0.0;     // 0 when tp+fn == 0
  double f1 = 0.0;         // 0 when precision+recall == 0
  std::optional<double> auc;  // absent when only one class is present
};

// Mann-Whitney AUC for the anomaly-detection direction: probability that a
// random untrustworthy point scores *lower* than a random trustworthy one,
// with ties counted half.
inline std::optional<double> auc_mann_whitney(const std::vector<double>& scores,
                                              const std::vector<double>& targets) {
  struct Pt {
    double s;
    bool pos;  // untrustworthy
  };
  std::vector<Pt> pts(scores.size());
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pts[i] = {scores[i], targets[i] < 0.5};
    n_pos += pts[i].pos ? 1 : 0;
  }
  const std::size_t n_neg = pts.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.s < b.s; });
  // Rank-sum with averaged ranks over tied groups. Positives should get low
  // ranks (low credibility), so AUC uses the rank sum of negatives.
  double rank_sum_neg = 0.0;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i;
    while (j < pts.size() && pts[j].s == pts[i].s) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (!pts[k].pos) rank_sum_neg += avg_rank;
    i = j;
  }
  const double u = rank_sum_neg - 0.5 * static_cast<double>(n_neg) *
                                      static_cast<double>(n_neg + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline Metrics compute_metrics(const std::vector<double>& scores,
                               const std::vector<double>& targets, double zeta) {
  if (scores.size() != targets.size())
    throw ContractError("compute_metrics: score/target length mismatch");
  if (scores.empty()) throw ContractError("compute_metrics: empty input");
  Metrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred_pos = scores[i] <= zeta;   // flagged untrustworthy
    const bool is_pos = targets[i] < 0.5;
    if (pred_pos && is_pos) ++m.tp;
    else if (pred_pos && !is_pos) ++m.fp;
    else if (!pred_pos && is_pos) ++m.fn;
    else ++m.tn;
  }
  const auto n = static_cast<double>(scores.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  m.precision = (m.tp + m.fp) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp)
                              : 0.0;
  m.recall = (m.tp + m.fn) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn)
                           : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  m.auc = auc_mann_whitney(scores, targets);
  return m;
}

// Picks the threshold maximizing F1 over midpoints between consecutive unique
// scores, plus one candidate above the maximum score (the flag-everything
// classifier). Ties resolve to the smallest candidate; a single-class input
// (no positives or no negatives) falls back to 0.5. Runs in O(n log n) with
// one sorted sweep instead of re-scoring every candidate.
inline double calibrate_threshold(const std::vector<double>& scores,
                                  const std::vector<double>& targets) {
  if (scores.size() != targets.size())
    throw ContractError("calibrate_threshold: score/target length mismatch");
  if (scores.empty()) throw ContractError("calibrate_threshold: empty input");
  struct Pt {
    double s;
    bool pos;
  };
  std::vector<Pt> pts(scores.size());
  std::int64_t total_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pts[i] = {scores[i], targets[i] < 0.5};
    total_pos += pts[i].pos ? 1 : 0;
  }
  if (total_pos == 0 || total_pos == static_cast<std::int64_t>(pts.size())) return 0.5;
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.s < b.s; });

  double best_f1 = -1.0, best_zeta = 0.5;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i;
    while (j < pts.size() && pts[j].s == pts[i].s) ++j;
    for (std::size_t k = i; k < j; ++k)
      pts[k].pos ? ++tp : ++fp;
    // Candidate threshold: the midpoint to the next distinct score, or —
    // after the last group — a point between the maximum score and 1, which
    // covers the flag-everything classifier.
    double zeta;
    if (j < pts.size()) {
      zeta = 0.5 * (pts[j - 1].s + pts[j].s);
    } else {
      if (pts[j - 1].s >= 1.0) break;  // no admissible zeta in (0,1) above it
      zeta = 0.5 * (pts[j - 1].s + 1.0);
    }
    // Predict positive at or below zeta: everything seen so far.
    const std::int64_t fn = total_pos - tp;
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    if (f1 > best_f1) {  // strict: ties keep the earlier (smaller) threshold
      best_f1 = f1;
      best_zeta = zeta;
    }
    i = j;
  }
  if (best_f1 < 0.0) return 0.5;  // all scores identical
  return best_zeta;
}

}  // namespace dycstg
