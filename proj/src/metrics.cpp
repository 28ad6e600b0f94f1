#include "tsap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsap/error.hpp"

namespace tsap {

void ScoredSet::validate(bool need_negative) const {
  if (scores.size() != labels.size())
    throw MetricError("scores and labels differ in length (" + std::to_string(scores.size()) +
                      " vs " + std::to_string(labels.size()) + ")");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw MetricError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw MetricError("non-finite score at index " + std::to_string(i));
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0) throw MetricError("metric undefined: no positive labels");
  if (need_negative && pos == labels.size()) throw MetricError("metric undefined: no negative labels");
}

namespace {

std::vector<std::size_t> order_by_score(const std::vector<double>& s, bool descending) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? s[a] > s[b] : s[a] < s[b];
  });
  return idx;
}

}  // namespace

double auroc(const ScoredSet& s) {
  s.validate();
  const std::vector<std::size_t> idx = order_by_score(s.scores, false);
  // Twice the positive rank sum keeps tied (half-integer) ranks exact.
  double twice_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) pos_in_group += s.labels[idx[j++]];
    twice_rank_sum += static_cast<double>(pos_in_group) * static_cast<double>(i + 1 + j);
    n_pos += pos_in_group;
    i = j;
  }
  const double P = static_cast<double>(n_pos);
  const double N = static_cast<double>(s.labels.size() - n_pos);
  return (0.5 * twice_rank_sum - P * (P + 1) / 2) / (P * N);
}

double best_f1(const ScoredSet& s) {
  s.validate(false);
  const std::vector<std::size_t> idx = order_by_score(s.scores, true);
  const double P = static_cast<double>(std::count(s.labels.begin(), s.labels.end(), 1));
  double best = 0.0, tp = 0.0, predicted = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) {
      tp += s.labels[idx[j++]];
      predicted += 1;
    }
    if (tp > 0) best = std::max(best, 2 * tp / (predicted + P));
    i = j;
  }
  return best;
}

}  // namespace tsap
