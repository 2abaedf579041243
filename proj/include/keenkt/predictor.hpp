#pragma once

#include <random>
#include <vector>

#include "keenkt/autodiff.hpp"

namespace keenkt {

// Two-layer scorer over [state || next-question embedding].
struct PredictorWeights {
  Parameter w1, b1, w2, b2;

  PredictorWeights(Index in_dim, Index hidden, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

struct ScoreOut {
  Var s;  // (B, T) raw activations
  Var p;  // (B, T) sigmoid probabilities
};

// s_t = w2^T relu(W1 [h_t || q_emb_t] + b1) + b2; p_t = sigmoid(s_t).
ScoreOut predictor_score(Tape& tape, PredictorWeights& w, Var h, Var q_emb);

// kappa_t = exp(-gamma * ||sigma_t||_1) over the last axis; in (0, 1].
Var confidence(Tape& tape, Var sigma, double gamma);

// y_hat = kappa * p + (1 - kappa) * 0.5.
Var blend(Tape& tape, Var p, Var kappa);

// Masked binary cross-entropy; masked positions contribute exactly zero.
// Normalized by the count of valid positions unless normalize is false.
Var bce_loss(Tape& tape, Var y_hat, Var labels, Var mask, bool normalize = true);

// L_total = L_BCE + lambda1 * L_MSE + lambda2 * L_NIGNCE.
Var total_loss(Var bce, Var mse, Var nce, double lambda1, double lambda2);

}  // namespace keenkt
