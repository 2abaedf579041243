#pragma once

#include <span>
#include <stdexcept>

namespace keenkt {

// auc() requires at least one positive and one negative label.
class AucUndefinedError : public std::runtime_error {
 public:
  AucUndefinedError() : std::runtime_error("AUC undefined: labels contain a single class") {}
};

// Mann-Whitney AUC: (wins + 0.5 * ties) / (n_pos * n_neg), computed with
// average ranks so it stays O(n log n) and exactly matches pairwise counting.
double auc(std::span<const double> scores, std::span<const int> labels);

double acc(std::span<const double> scores, std::span<const int> labels,
           double threshold = 0.5);

}  // namespace keenkt
