#include "keenkt/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "keenkt/common.hpp"

namespace keenkt {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auc: scores and labels differ in length");
  }
  std::size_t n = scores.size();
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg) += 1.0;
  if (n_pos == 0 || n_neg == 0) throw AucUndefinedError();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks within tie groups; ranks are 1-based
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  double u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

double acc(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) {
    throw ShapeError("acc: scores and labels differ in length");
  }
  if (scores.empty()) throw DomainError("acc: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    int predicted = scores[i] >= threshold ? 1 : 0;
    if (predicted == (labels[i] != 0 ? 1 : 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

}  // namespace keenkt
