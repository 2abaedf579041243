#pragma once

#include <vector>

#include "keenkt/autodiff.hpp"

namespace keenkt {

// Bias-corrected Adam over a fixed parameter set. Moment buffers are
// allocated per parameter on construction; step() consumes the gradients
// currently stored in each Parameter.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Parameter*> params, double lr = 1e-3,
                         double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);

  void step();
  void zero_grad();
  long t() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace keenkt
