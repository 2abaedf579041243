#include "keenkt/encoder.hpp"

namespace keenkt {

namespace {
constexpr double kInitStd = 0.02;
}

EncoderTables::EncoderTables(Index q, Index dim, std::mt19937_64& rng)
    : n_questions(q),
      d(dim),
      q_mu("enc.q_mu", Tensor::randn({q, dim}, rng, kInitStd)),
      q_alpha("enc.q_alpha", Tensor::randn({q, dim}, rng, kInitStd)),
      q_beta("enc.q_beta", Tensor::randn({q, dim}, rng, kInitStd)),
      q_delta("enc.q_delta", Tensor::randn({q, dim}, rng, kInitStd)),
      x_mu("enc.x_mu", Tensor::randn({2 * q, dim}, rng, kInitStd)),
      x_alpha("enc.x_alpha", Tensor::randn({2 * q, dim}, rng, kInitStd)),
      x_beta("enc.x_beta", Tensor::randn({2 * q, dim}, rng, kInitStd)),
      x_delta("enc.x_delta", Tensor::randn({2 * q, dim}, rng, kInitStd)) {}

std::vector<Parameter*> EncoderTables::parameters() {
  return {&q_mu, &q_alpha, &q_beta, &q_delta, &x_mu, &x_alpha, &x_beta, &x_delta};
}

Index interaction_index(Index q, int r, Index n_questions) {
  if (q < 0 || q >= n_questions) {
    throw DomainError("interaction_index: question " + std::to_string(q) +
                      " outside vocabulary of " + std::to_string(n_questions));
  }
  if (r != 0 && r != 1) {
    throw DomainError("interaction_index: response must be 0 or 1");
  }
  return q + static_cast<Index>(r) * n_questions;
}

namespace {

struct ChannelVars {
  Var mu, alpha, beta, delta;
};

// Taped version of the nig.hpp constraint transform.
ChannelVars constrain(Tape& tape, Var raw_mu, Var raw_alpha, Var raw_beta,
                      Var raw_delta) {
  ChannelVars c;
  c.mu = raw_mu;
  Var eps = tape.constant(Tensor::scalar(kAlphaEps));
  c.alpha = add(softplus(raw_alpha), eps);
  c.beta = scalar_mul(mul(tanh(raw_beta), c.alpha), kBetaShrink);
  Var one = tape.constant(Tensor::scalar(1.0));
  c.delta = add(elu(raw_delta), one);
  return c;
}

// Taped Eq.-style moments. Negative powers of (alpha^2 - beta^2) go through
// exp(c * log(.)), which stays within the engine's op alphabet; the argument
// is strictly positive because |beta| <= 0.999 * alpha.
struct MomentVars {
  Var mean, var;
};

MomentVars moments_on_tape(const ChannelVars& c) {
  Var g2 = sub(square(c.alpha), square(c.beta));
  Var log_g2 = log(g2);
  Var inv_sqrt = exp(scalar_mul(log_g2, -0.5));    // (a^2-b^2)^-1/2
  Var inv_p75 = exp(scalar_mul(log_g2, -0.75));    // (a^2-b^2)^-3/4
  MomentVars m;
  m.mean = add(c.mu, mul(mul(c.delta, c.beta), inv_sqrt));
  m.var = mul(mul(sqrt(c.delta), c.alpha), inv_p75);
  return m;
}

}  // namespace

EncodedStreams encode(Tape& tape, EncoderTables& tables, const IndexArray& questions,
                      const IndexArray& interactions) {
  if (questions.shape != interactions.shape) {
    throw ShapeError("encode: question and interaction id shapes differ");
  }
  ChannelVars q = constrain(tape, gather_rows(tape.param(tables.q_mu), questions),
                            gather_rows(tape.param(tables.q_alpha), questions),
                            gather_rows(tape.param(tables.q_beta), questions),
                            gather_rows(tape.param(tables.q_delta), questions));
  ChannelVars x = constrain(tape, gather_rows(tape.param(tables.x_mu), interactions),
                            gather_rows(tape.param(tables.x_alpha), interactions),
                            gather_rows(tape.param(tables.x_beta), interactions),
                            gather_rows(tape.param(tables.x_delta), interactions));
  MomentVars qm = moments_on_tape(q);
  MomentVars xm = moments_on_tape(x);
  EncodedStreams out;
  out.q_mu = q.mu;
  out.q_alpha = q.alpha;
  out.q_beta = q.beta;
  out.q_delta = q.delta;
  out.x_mu = x.mu;
  out.x_alpha = x.alpha;
  out.x_beta = x.beta;
  out.x_delta = x.delta;
  out.q_mean = qm.mean;
  out.q_var = qm.var;
  out.x_mean = xm.mean;
  out.x_var = xm.var;
  return out;
}

}  // namespace keenkt
