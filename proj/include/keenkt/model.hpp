#pragma once

#include <memory>
#include <optional>
#include <string>

#include "keenkt/data.hpp"
#include "keenkt/msd.hpp"
#include "keenkt/predictor.hpp"

namespace keenkt {

struct ModelConfig {
  Index d = 128;
  Index hidden = 256;
  int n_blocks = 2;
  Index denoiser_hidden = 256;
  double tau = 0.07;
  double gamma = 0.4;
  double noise_level = 0.20;
  double lambda1 = 0.15;
  double lambda2 = 0.04;
  bool ablate_cl = false;    // drop the contrastive loss
  bool ablate_diff = false;  // drop the denoising loss
  bool ablate_nig = false;   // deterministic embeddings + dot-product attention
  bool bce_normalize = true;
  bool aux_in_eval = false;

  void validate() const;
};

// Right-padded minibatch with the masks every loss and metric respects:
//   valid_mask    t < len         (real positions)
//   predict_mask  1 <= t < len    (positions with at least one step of history)
//   attn_mask     j < i && j < len (strict causality over interaction keys)
struct Batch {
  Index b = 0;
  Index t = 0;
  IndexArray questions;
  IndexArray interactions;
  Tensor labels;
  Tensor valid_mask;
  Tensor predict_mask;
  Tensor attn_mask;
  std::vector<Index> lengths;
};

Batch make_batch(const std::vector<const StudentSequence*>& seqs, Index n_questions);

class KeenModel {
 public:
  KeenModel(ModelConfig cfg, Index n_questions, std::uint64_t init_seed);
  KeenModel(KeenModel&&) = default;
  KeenModel& operator=(KeenModel&&) = default;

  struct ForwardOut {
    Var total, bce, mse, nce;
    Var y_hat, kappa, p, sigma_l1;  // (B, T)
    Var sigma_out;                  // (B, T, d); invalid in the no-NIG variant
    std::optional<EncodedStreams> encoded;  // absent in the no-NIG variant
    std::vector<Tensor> attention_weights;
  };

  ForwardOut forward(Tape& tape, const Batch& batch, RunMode mode,
                     std::mt19937_64* noise_rng);

  std::vector<Parameter*> parameters();
  const ModelConfig& config() const { return cfg_; }
  Index n_questions() const { return n_questions_; }

 private:
  struct FullWeights {
    EncoderTables enc;
    MsdWeights msd;
    PredictorWeights pred;
  };
  struct DotBlockWeights {
    Parameter wq, wk, wv;
    Parameter ff_w1, ff_b1, ff_w2, ff_b2;
    DotBlockWeights(int block, Index d, Index hidden, std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
  };
  struct NoNigWeights {
    Parameter q_emb, x_emb;
    std::vector<DotBlockWeights> blocks;
    DenoiserWeights denoiser;
    PredictorWeights pred;
  };

  ForwardOut forward_full(Tape& tape, const Batch& batch, RunMode mode,
                          std::mt19937_64* noise_rng);
  ForwardOut forward_nonig(Tape& tape, const Batch& batch, RunMode mode,
                           std::mt19937_64* noise_rng);

  ModelConfig cfg_;
  Index n_questions_ = 0;
  std::unique_ptr<FullWeights> full_;
  std::unique_ptr<NoNigWeights> nonig_;
};

// Checkpoint = JSON manifest at `path` (format version, model config,
// question vocabulary, per-parameter name/shape/offset) plus a binary blob
// of little-endian 64-bit reals at `path` + ".bin" in manifest order.
struct CheckpointVocab {
  std::vector<std::string> question_ids;
  std::vector<std::string> question_concepts;
};

void save_checkpoint(KeenModel& model, const CheckpointVocab& vocab,
                     const std::string& path);

struct LoadedCheckpoint {
  KeenModel model;
  CheckpointVocab vocab;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace keenkt
