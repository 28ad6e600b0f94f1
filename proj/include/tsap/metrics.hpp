#pragma once

// Sequence-level detection metrics.

#include <vector>

namespace tsap {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = anomalous

  /// Equal lengths, 0/1 labels, finite scores, at least one positive and,
  /// if `need_negative`, at least one negative. Throws MetricError.
  void validate(bool need_negative = true) const;
};

/// Rank-based AUROC with ties counted as one half.
double auroc(const ScoredSet& s);

/// Best F1 over the thresholds at every distinct score, predicting
/// anomalous iff score >= threshold. Defined without negatives too (1.0).
double best_f1(const ScoredSet& s);

}  // namespace tsap
