#pragma once

#include <cstdint>
#include <random>

#include "keenkt/tensor.hpp"

namespace keenkt {

// Normal-Inverse-Gaussian toolkit. Plain (non-taped) vector math used for
// verification, inspection, and as the reference for the taped encoder path.
//
// Constrained parameterization per dimension:
//   alpha = softplus(raw) + 1e-7        (tail heaviness, > 0)
//   beta  = tanh(raw) * alpha * 0.999   (asymmetry, |beta| < alpha)
//   delta = elu(raw) + 1                (scale, > 0)
//   mu    = raw                         (location)

inline constexpr double kAlphaEps = 1e-7;
inline constexpr double kBetaShrink = 0.999;

struct NigParams {
  Eigen::ArrayXd mu;
  Eigen::ArrayXd alpha;
  Eigen::ArrayXd beta;
  Eigen::ArrayXd delta;

  Index dims() const { return static_cast<Index>(mu.size()); }
};

struct NigMoments {
  Eigen::ArrayXd mean;
  Eigen::ArrayXd var;
};

NigParams constrain_params(const Eigen::ArrayXd& raw_mu,
                           const Eigen::ArrayXd& raw_alpha,
                           const Eigen::ArrayXd& raw_beta,
                           const Eigen::ArrayXd& raw_delta);

// mean = mu + delta*beta/sqrt(alpha^2-beta^2)
// var  = sqrt(delta)*alpha/(alpha^2-beta^2)^0.75
NigMoments moments(const NigParams& p);

// The standard NIG variance delta*alpha^2/(alpha^2-beta^2)^1.5. The moments()
// var above deviates from it; the Monte-Carlo oracle checks this form.
Eigen::ArrayXd textbook_variance(const NigParams& p);

// ||mu_i-mu_j||_2^2 + ||sqrt(var_i)-sqrt(var_j)||_2^2
double nig_distance(const Eigen::ArrayXd& mu_i, const Eigen::ArrayXd& var_i,
                    const Eigen::ArrayXd& mu_j, const Eigen::ArrayXd& var_j);

// dist -> 1/(1+dist), in (0,1], strictly decreasing.
double similarity(double dist);

// Exact inverse-Gaussian draw (Michael-Schucany-Haas transform).
double sample_inverse_gaussian(double mean, double shape, std::mt19937_64& rng);

// Monte-Carlo sampling oracle: draws V ~ IG(delta/gamma', delta^2) with
// gamma' = sqrt(alpha^2-beta^2), then X | V ~ Normal(mu + beta*V, V).
// Returns an (n x dims) array of X samples. Verification only; not on the
// training path.
Eigen::ArrayXXd sample_nig(const NigParams& p, Index n, std::uint64_t seed);

}  // namespace keenkt
