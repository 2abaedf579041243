#include "keenkt/msd.hpp"

#include <cmath>

namespace keenkt {

void MsdConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (denoiser_hidden < 1) throw ConfigError("denoiser_hidden must be >= 1");
}

namespace {

Tensor glorot(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::randn({fan_in, fan_out}, rng, std);
}

Tensor noise_tensor(const Shape& shape, double noise_level, std::mt19937_64& rng) {
  if (noise_level <= 0.0) return Tensor::zeros(shape);
  return Tensor::randn(shape, rng, noise_level);
}

}  // namespace

AttentionBlockWeights::AttentionBlockWeights(int block, Index d, Index hidden,
                                             std::mt19937_64& rng)
    : wq_mu("blk" + std::to_string(block) + ".wq_mu", glorot(d, d, rng)),
      wk_mu("blk" + std::to_string(block) + ".wk_mu", glorot(d, d, rng)),
      wv_mu("blk" + std::to_string(block) + ".wv_mu", glorot(d, d, rng)),
      wq_sigma("blk" + std::to_string(block) + ".wq_sigma", glorot(d, d, rng)),
      wk_sigma("blk" + std::to_string(block) + ".wk_sigma", glorot(d, d, rng)),
      wv_sigma("blk" + std::to_string(block) + ".wv_sigma", glorot(d, d, rng)),
      ff_w1("blk" + std::to_string(block) + ".ff_w1", glorot(2 * d, hidden, rng)),
      ff_b1("blk" + std::to_string(block) + ".ff_b1", Tensor::zeros({hidden})),
      ff_w2("blk" + std::to_string(block) + ".ff_w2", glorot(hidden, 2 * d, rng)),
      ff_b2("blk" + std::to_string(block) + ".ff_b2", Tensor::zeros({2 * d})) {}

std::vector<Parameter*> AttentionBlockWeights::parameters() {
  return {&wq_mu, &wk_mu, &wv_mu, &wq_sigma, &wk_sigma, &wv_sigma,
          &ff_w1, &ff_b1, &ff_w2, &ff_b2};
}

DenoiserWeights::DenoiserWeights(Index feature, Index hidden, std::mt19937_64& rng)
    : w1("den.w1", glorot(feature, hidden, rng)),
      b1("den.b1", Tensor::zeros({hidden})),
      w2("den.w2", glorot(hidden, feature, rng)),
      b2("den.b2", Tensor::zeros({feature})) {}

std::vector<Parameter*> DenoiserWeights::parameters() {
  return {&w1, &b1, &w2, &b2};
}

AttentionOut nig_attention(Tape& tape, AttentionBlockWeights& w, Var q_mu, Var q_sigma,
                           Var kv_mu, Var kv_sigma, Var mask, double tau) {
  if (tau <= 0.0) throw DomainError("nig_attention: tau must be positive");
  Var qm = matmul(q_mu, tape.param(w.wq_mu));
  Var km = matmul(kv_mu, tape.param(w.wk_mu));
  Var vm = matmul(kv_mu, tape.param(w.wv_mu));
  // linear projections destroy positivity of the variance path; softplus
  // restores it so the sqrt in the distance is defined
  Var qs = softplus(matmul(q_sigma, tape.param(w.wq_sigma)));
  Var ks = softplus(matmul(kv_sigma, tape.param(w.wk_sigma)));
  Var vs = matmul(kv_sigma, tape.param(w.wv_sigma));

  Var dist = add(l2_squared_distance(qm, km),
                 l2_squared_distance(sqrt(qs), sqrt(ks)));
  Var sim = inv_one_plus(dist);
  Var alpha = masked_softmax_last(scalar_mul(sim, 1.0 / tau), mask);
  Var h = matmul(alpha, concat_last(vm, vs));
  return AttentionOut{h, alpha, tape.value(alpha)};
}

Var diffusion_denoise_loss(Tape& tape, DenoiserWeights& w, Var h,
                           const Tensor& element_mask, double n_valid_elements,
                           double noise_level, std::mt19937_64& rng) {
  if (noise_level < 0.0) throw DomainError("diffusion_denoise_loss: negative noise level");
  if (n_valid_elements <= 0.0) throw DomainError("diffusion_denoise_loss: empty mask");
  Var eps = tape.constant(noise_tensor(h.shape(), noise_level, rng));
  Var noisy = add(h, eps);
  Var hidden = relu(add(matmul(noisy, tape.param(w.w1)), tape.param(w.b1)));
  Var rec = add(matmul(hidden, tape.param(w.w2)), tape.param(w.b2));
  Var err = square(sub(rec, h));
  Var masked = mul(err, tape.constant(element_mask));
  return scalar_mul(sum(masked), 1.0 / n_valid_elements);
}

Var nig_contrastive_loss(Tape& tape, Var anchor_mean, Var anchor_var, Var pos_mean,
                         Var pos_var, double tau) {
  if (tau <= 0.0) throw DomainError("nig_contrastive_loss: tau must be positive");
  const Shape& s = anchor_mean.shape();
  if (s.size() != 2) {
    throw ShapeError("nig_contrastive_loss: expected (batch, d) summaries");
  }
  Index batch = s[0];
  if (batch < 2) {
    throw DomainError("nig_contrastive_loss: batch must be >= 2 for in-batch negatives");
  }
  Var dist = add(l2_squared_distance(anchor_mean, pos_mean),
                 l2_squared_distance(sqrt(anchor_var), sqrt(pos_var)));
  Var logits = scalar_mul(inv_one_plus(dist), 1.0 / tau);
  // cross-entropy against the diagonal (each anchor's own positive)
  Var z = sum_last(exp(logits));
  Tensor eye = Tensor::zeros({batch, batch});
  for (Index i = 0; i < batch; ++i) eye[i * batch + i] = 1.0;
  Var diag = sum_last(mul(logits, tape.constant(eye)));
  return mean(sub(log(z), diag));
}

MsdOutput run_msd(Tape& tape, MsdWeights& weights, const EncodedStreams& streams,
                  const Tensor& attn_mask, const Tensor& valid_mask,
                  const std::vector<Index>& lengths, const MsdConfig& cfg,
                  RunMode mode, std::mt19937_64* noise_rng, bool compute_mse,
                  bool compute_nce) {
  cfg.validate();
  const Shape& qshape = streams.q_mean.shape();
  Index b = qshape[0], t = qshape[1], d = qshape[2];

  Var mask = tape.constant(attn_mask);
  Var q_m = streams.q_mean;
  Var q_s = streams.q_var;
  Var h;
  Var final_alpha;
  MsdOutput out;
  for (auto& block : weights.blocks) {
    AttentionOut at =
        nig_attention(tape, block, q_m, q_s, streams.x_mean, streams.x_var, mask, cfg.tau);
    Var x = add(at.h, concat_last(q_m, q_s));  // residual
    Var ff = add(matmul(relu(add(matmul(x, tape.param(block.ff_w1)),
                                 tape.param(block.ff_b1))),
                        tape.param(block.ff_w2)),
                 tape.param(block.ff_b2));
    h = add(x, ff);
    q_m = slice_last(h, 0, d);
    q_s = softplus(slice_last(h, d, d));
    final_alpha = at.alpha;
    out.attention_weights.push_back(std::move(at.weights));
  }
  out.h = h;
  out.sigma_out = matmul(final_alpha, streams.x_var);

  out.aux_mse = tape.constant(Tensor::scalar(0.0));
  out.aux_nce = tape.constant(Tensor::scalar(0.0));
  bool want_aux = (mode == RunMode::kTrain) || cfg.aux_in_eval;
  if (!want_aux) return out;

  std::mt19937_64 eval_rng(0);  // fixed stream keeps eval-time aux deterministic
  std::mt19937_64& rng = (mode == RunMode::kTrain) ? *noise_rng : eval_rng;

  double n_valid = valid_mask.array().sum();
  if (compute_mse) {
    Tensor element_mask({b, t, 2 * d});
    for (Index bi = 0; bi < b; ++bi) {
      for (Index ti = 0; ti < t; ++ti) {
        double m = valid_mask[bi * t + ti];
        Eigen::Map<Eigen::ArrayXd>(element_mask.data() + (bi * t + ti) * 2 * d, 2 * d)
            .setConstant(m);
      }
    }
    out.aux_mse = diffusion_denoise_loss(tape, weights.denoiser, h, element_mask,
                                         n_valid * static_cast<double>(2 * d),
                                         cfg.noise_level, rng);
  }

  if (compute_nce && b >= 2) {
    // mean-over-valid-time pooling weights, (B, 1, T)
    Tensor pool({b, 1, t});
    for (Index bi = 0; bi < b; ++bi) {
      double len = static_cast<double>(lengths[static_cast<std::size_t>(bi)]);
      for (Index ti = 0; ti < t; ++ti) {
        pool[bi * t + ti] = valid_mask[bi * t + ti] / len;
      }
    }
    Var pool_w = tape.constant(pool);
    Var anchor_mean = reshape(matmul(pool_w, q_m), {b, d});
    Var anchor_var = reshape(matmul(pool_w, q_s), {b, d});
    // positive view: an independently perturbed copy of the same sequence
    Var h2 = add(h, tape.constant(noise_tensor(h.shape(), cfg.noise_level, rng)));
    Var pos_mean = reshape(matmul(pool_w, slice_last(h2, 0, d)), {b, d});
    Var pos_var = reshape(matmul(pool_w, softplus(slice_last(h2, d, d))), {b, d});
    out.aux_nce = nig_contrastive_loss(tape, anchor_mean, anchor_var, pos_mean, pos_var,
                                       cfg.tau);
  }
  return out;
}

}  // namespace keenkt
