#pragma once

#include <random>
#include <vector>

#include "keenkt/autodiff.hpp"
#include "keenkt/nig.hpp"

namespace keenkt {

// Eight embedding tables: question stream (Q x d) and interaction stream
// (2Q x d), one table per NIG channel. Raw entries start at N(0, 0.02^2) so
// initial alpha ~ ln 2 and delta ~ 1.
struct EncoderTables {
  Index n_questions;
  Index d;
  Parameter q_mu, q_alpha, q_beta, q_delta;
  Parameter x_mu, x_alpha, x_beta, x_delta;

  EncoderTables(Index n_questions, Index d, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

// Interaction vocabulary index: q + r * Q.
Index interaction_index(Index q, int r, Index n_questions);

// Constrained NIG channels and their moments for both streams, all on the
// tape and differentiable back to the tables. Shapes (B, T, d).
struct EncodedStreams {
  Var q_mu, q_alpha, q_beta, q_delta;
  Var x_mu, x_alpha, x_beta, x_delta;
  Var q_mean, q_var;
  Var x_mean, x_var;
};

EncodedStreams encode(Tape& tape, EncoderTables& tables, const IndexArray& questions,
                      const IndexArray& interactions);

}  // namespace keenkt
