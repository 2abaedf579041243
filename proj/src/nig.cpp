#include "keenkt/nig.hpp"

#include <cmath>

namespace keenkt {

namespace {

void check_finite(const char* what, const Eigen::ArrayXd& x) {
  if (!x.isFinite().all()) {
    throw DomainError(std::string("constrain_params: non-finite ") + what);
  }
}

Eigen::ArrayXd gamma_prime(const NigParams& p) {
  Eigen::ArrayXd g2 = p.alpha.square() - p.beta.square();
  if ((g2 <= 0.0).any()) {
    throw DomainError("moments: alpha^2 - beta^2 must be positive");
  }
  return g2.sqrt();
}

}  // namespace

NigParams constrain_params(const Eigen::ArrayXd& raw_mu,
                           const Eigen::ArrayXd& raw_alpha,
                           const Eigen::ArrayXd& raw_beta,
                           const Eigen::ArrayXd& raw_delta) {
  check_finite("mu", raw_mu);
  check_finite("alpha", raw_alpha);
  check_finite("beta", raw_beta);
  check_finite("delta", raw_delta);
  if (raw_mu.size() != raw_alpha.size() || raw_mu.size() != raw_beta.size() ||
      raw_mu.size() != raw_delta.size()) {
    throw ShapeError("constrain_params: channel lengths differ");
  }
  NigParams p;
  p.mu = raw_mu;
  p.alpha = kernels::softplus(raw_alpha) + kAlphaEps;
  p.beta = raw_beta.tanh() * p.alpha * kBetaShrink;
  p.delta = kernels::elu(raw_delta) + 1.0;
  return p;
}

NigMoments moments(const NigParams& p) {
  Eigen::ArrayXd g = gamma_prime(p);
  NigMoments m;
  m.mean = p.mu + p.delta * p.beta / g;
  m.var = p.delta.sqrt() * p.alpha / g.pow(1.5);
  return m;
}

Eigen::ArrayXd textbook_variance(const NigParams& p) {
  Eigen::ArrayXd g = gamma_prime(p);
  return p.delta * p.alpha.square() / g.cube();
}

double nig_distance(const Eigen::ArrayXd& mu_i, const Eigen::ArrayXd& var_i,
                    const Eigen::ArrayXd& mu_j, const Eigen::ArrayXd& var_j) {
  if (mu_i.size() != mu_j.size() || var_i.size() != var_j.size() ||
      mu_i.size() != var_i.size()) {
    throw ShapeError("nig_distance: vector lengths differ");
  }
  if ((var_i < 0.0).any() || (var_j < 0.0).any()) {
    throw DomainError("nig_distance: negative variance");
  }
  return (mu_i - mu_j).square().sum() + (var_i.sqrt() - var_j.sqrt()).square().sum();
}

double similarity(double dist) {
  if (dist < 0.0) throw DomainError("similarity: negative distance");
  return 1.0 / (1.0 + dist);
}

double sample_inverse_gaussian(double mean, double shape, std::mt19937_64& rng) {
  if (mean <= 0.0 || shape <= 0.0) {
    throw DomainError("sample_inverse_gaussian: mean and shape must be positive");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double z = normal(rng);
  double y = z * z;
  double x = mean + mean * mean * y / (2.0 * shape) -
             (mean / (2.0 * shape)) *
                 std::sqrt(4.0 * mean * shape * y + mean * mean * y * y);
  double u = uniform(rng);
  return u <= mean / (mean + x) ? x : mean * mean / x;
}

Eigen::ArrayXXd sample_nig(const NigParams& p, Index n, std::uint64_t seed) {
  if (n < 1) throw DomainError("sample_nig: need n >= 1");
  if ((p.alpha <= 0.0).any() || (p.delta <= 0.0).any() ||
      (p.beta.abs() >= p.alpha).any()) {
    throw DomainError("sample_nig: invalid NIG parameters");
  }
  Eigen::ArrayXd g = gamma_prime(p);
  Index d = p.dims();
  Eigen::ArrayXXd out(n, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < d; ++j) {
    double ig_mean = p.delta[j] / g[j];
    double ig_shape = p.delta[j] * p.delta[j];
    for (Index i = 0; i < n; ++i) {
      double v = sample_inverse_gaussian(ig_mean, ig_shape, rng);
      out(i, j) = p.mu[j] + p.beta[j] * v + std::sqrt(v) * normal(rng);
    }
  }
  return out;
}

}  // namespace keenkt
