#include "keenkt/optimizer.hpp"

#include <cmath>

namespace keenkt {

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Eigen::ArrayXd::Zero(p->value.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p->value.size()));
  }
}

void AdamOptimizer::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() != p.value.size()) {
      throw ShapeError("adam: gradient/parameter size mismatch for '" + p.name + "'");
    }
    const Eigen::ArrayXd& g = p.grad.array();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    p.value.array() -= lr_ * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
  }
}

void AdamOptimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace keenkt
