#pragma once

#include <random>
#include <vector>

#include "keenkt/encoder.hpp"

namespace keenkt {

enum class RunMode { kTrain, kEval };

struct MsdConfig {
  double tau = 0.07;          // softmax temperature
  double noise_level = 0.20;  // stddev of injected noise
  int n_blocks = 2;
  Index hidden = 256;          // feed-forward hidden width
  Index denoiser_hidden = 256;
  bool aux_in_eval = false;    // compute aux losses at eval time (seeded 0)

  void validate() const;
};

// One attention block: separate mean/variance-path projections plus the
// post-attention feed-forward operating on the concatenated 2d features.
struct AttentionBlockWeights {
  Parameter wq_mu, wk_mu, wv_mu;
  Parameter wq_sigma, wk_sigma, wv_sigma;
  Parameter ff_w1, ff_b1, ff_w2, ff_b2;

  AttentionBlockWeights(int block, Index d, Index hidden, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

// Two-layer ReLU MLP reconstructing clean hidden states from noisy ones.
struct DenoiserWeights {
  Parameter w1, b1, w2, b2;

  DenoiserWeights(Index feature, Index hidden, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

struct MsdWeights {
  std::vector<AttentionBlockWeights> blocks;
  DenoiserWeights denoiser;
};

struct AttentionOut {
  Var h;           // (B, T, 2d): attention-weighted [V_mu || V_sigma]
  Var alpha;       // (B, T, T) softmax rows, on the tape
  Tensor weights;  // value snapshot of alpha
};

// Distance-based attention: projects both paths, restores variance
// positivity with softplus, scores pairs by 1/(1 + Dist) with
// Dist = ||mu_i - mu_j||^2 + ||sqrt(s_i) - sqrt(s_j)||^2 over the projected
// streams, then takes a temperature-scaled masked softmax.
AttentionOut nig_attention(Tape& tape, AttentionBlockWeights& w, Var q_mu, Var q_sigma,
                           Var kv_mu, Var kv_sigma, Var mask, double tau);

// Noise-injection reconstruction loss: mean over valid elements of
// (F_diff(h + eps) - h)^2, eps ~ N(0, noise_level^2) elementwise.
// Differentiable through both the denoiser input and the clean target.
Var diffusion_denoise_loss(Tape& tape, DenoiserWeights& w, Var h,
                           const Tensor& element_mask, double n_valid_elements,
                           double noise_level, std::mt19937_64& rng);

// InfoNCE over pooled distributional summaries: logits are 1/(1+Dist)/tau
// between each anchor and every positive in the batch; the target is the
// matching positive. Requires batch >= 2 (at least one negative).
Var nig_contrastive_loss(Tape& tape, Var anchor_mean, Var anchor_var, Var pos_mean,
                         Var pos_var, double tau);

struct MsdOutput {
  Var h;           // (B, T, 2d)
  // Predictor-facing variance state: the final block's attention rows
  // applied to the interaction-stream variance moments. Nonnegative by
  // construction (convex mixture of positive variances; zero only for the
  // history-free first position).
  Var sigma_out;   // (B, T, d)
  Var aux_mse;     // scalar
  Var aux_nce;     // scalar
  std::vector<Tensor> attention_weights;  // per block
};

// Full disambiguator stack: n_blocks of cross-attention (queries from the
// question stream, keys/values from the interaction stream under the causal
// mask) with residual + feed-forward, then the two auxiliary losses.
// compute_mse / compute_nce gate the corresponding ablations. In eval mode
// aux noise is drawn from a fixed seed-0 stream (or skipped entirely unless
// cfg.aux_in_eval).
MsdOutput run_msd(Tape& tape, MsdWeights& weights, const EncodedStreams& streams,
                  const Tensor& attn_mask, const Tensor& valid_mask,
                  const std::vector<Index>& lengths, const MsdConfig& cfg,
                  RunMode mode, std::mt19937_64* noise_rng, bool compute_mse,
                  bool compute_nce);

}  // namespace keenkt
