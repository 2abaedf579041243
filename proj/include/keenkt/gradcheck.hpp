#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "keenkt/autodiff.hpp"

namespace keenkt {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Builds a scalar loss from leaf Vars created for `inputs` (one per tensor,
// in order). Must be deterministic across calls.
using ScalarGraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares tape gradients against central finite differences (step h) on
// every entry of every input. Relative error uses max(1, |analytic|, |numeric|)
// as denominator.
GradCheckResult check_scalar_graph(const std::string& name, const ScalarGraphFn& fn,
                                   const std::vector<Tensor>& inputs,
                                   double tol = 1e-4, double step = 1e-5);

// One row per differentiable op kind, each evaluated at `points` random
// input draws (inputs kept away from kinks and domain edges).
std::vector<GradCheckResult> check_all_ops(std::uint64_t seed, double tol = 1e-4,
                                           int points = 10);

// Gradient of the composed multi-task training loss on a miniature model,
// checked entry-by-entry for every parameter (noise frozen per evaluation).
GradCheckResult check_total_loss_graph(std::uint64_t seed, double tol = 1e-4);

}  // namespace keenkt
