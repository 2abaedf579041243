#include "keenkt/predictor.hpp"

#include <cmath>

namespace keenkt {

PredictorWeights::PredictorWeights(Index in_dim, Index hidden, std::mt19937_64& rng)
    : w1("pred.w1",
         Tensor::randn({in_dim, hidden}, rng,
                       std::sqrt(2.0 / static_cast<double>(in_dim + hidden)))),
      b1("pred.b1", Tensor::zeros({hidden})),
      w2("pred.w2",
         Tensor::randn({hidden, 1}, rng,
                       std::sqrt(2.0 / static_cast<double>(hidden + 1)))),
      b2("pred.b2", Tensor::zeros({1})) {}

std::vector<Parameter*> PredictorWeights::parameters() {
  return {&w1, &b1, &w2, &b2};
}

ScoreOut predictor_score(Tape& tape, PredictorWeights& w, Var h, Var q_emb) {
  Var z = concat_last(h, q_emb);
  Var hidden = relu(add(matmul(z, tape.param(w.w1)), tape.param(w.b1)));
  Var s3 = add(matmul(hidden, tape.param(w.w2)), tape.param(w.b2));
  const Shape& shape = s3.shape();
  Var s = reshape(s3, Shape(shape.begin(), shape.end() - 1));
  return ScoreOut{s, sigmoid(s)};
}

Var confidence(Tape&, Var sigma, double gamma) {
  if (gamma < 0.0) throw DomainError("confidence: gamma must be >= 0");
  return exp(scalar_mul(l1_norm_last(sigma), -gamma));
}

Var blend(Tape& tape, Var p, Var kappa) {
  Var half = tape.constant(Tensor::full(p.shape(), 0.5));
  // kappa*p - 0.5*kappa + 0.5
  return add(sub(mul(kappa, p), scalar_mul(kappa, 0.5)), half);
}

Var bce_loss(Tape& tape, Var y_hat, Var labels, Var mask, bool normalize) {
  if (!y_hat.value().same_shape(labels.value()) ||
      !y_hat.value().same_shape(mask.value())) {
    throw ShapeError("bce_loss: y_hat, labels and mask must share one shape");
  }
  double n_valid = mask.value().array().sum();
  if (n_valid <= 0.0) throw DomainError("bce_loss: mask selects no positions");
  Var ones = tape.constant(Tensor::ones(y_hat.shape()));
  // pin masked positions to 0.5 before the log so they are exactly inert
  Var y_safe = add(mul(y_hat, mask), scalar_mul(sub(ones, mask), 0.5));
  Var ll = add(mul(labels, log(y_safe)), mul(sub(ones, labels), log(sub(ones, y_safe))));
  Var total = sum(mul(ll, mask));
  return scalar_mul(total, normalize ? -1.0 / n_valid : -1.0);
}

Var total_loss(Var bce, Var mse, Var nce, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw DomainError("total_loss: lambda weights must be >= 0");
  }
  return add(bce, add(scalar_mul(mse, lambda1), scalar_mul(nce, lambda2)));
}

}  // namespace keenkt
