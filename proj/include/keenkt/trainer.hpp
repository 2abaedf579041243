#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "keenkt/metrics.hpp"
#include "keenkt/model.hpp"

namespace keenkt {

struct TrainConfig {
  Index d = 128;
  Index hidden = 256;
  Index batch = 128;
  double lr = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  double lambda1 = 0.15;
  double lambda2 = 0.04;
  double tau = 0.07;
  double gamma = 0.4;
  double noise_level = 0.20;
  Index max_seq_len = 200;
  std::uint64_t seed = 1;
  int folds = 5;
  int n_blocks = 2;
  Index denoiser_hidden = 0;  // 0 means "same as hidden"
  double val_fraction = 0.2;
  bool bce_normalize = true;
  bool aux_in_eval = false;
  bool ablate_cl = false;
  bool ablate_diff = false;
  bool ablate_nig = false;

  void validate() const;
  ModelConfig model_config() const;
};

// Counts epochs since the best metric; stops after exactly `patience`
// non-improving updates. Improvement is strict.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool update(double metric) {
    ++n_updates_;
    if (!has_best_ || metric > best_) {
      has_best_ = true;
      best_ = metric;
      best_index_ = n_updates_;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  int best_index() const { return best_index_; }  // 1-based update index
  double best() const { return best_; }

 private:
  int patience_;
  bool has_best_ = false;
  double best_ = 0.0;
  int best_index_ = 0;
  int since_best_ = 0;
  int n_updates_ = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_total = 0, loss_bce = 0, loss_mse = 0, loss_nce = 0;
  std::optional<double> val_auc;
  double val_acc = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  std::optional<double> best_val_auc;
  double best_val_acc = 0;
  bool stopped_early = false;
};

nlohmann::json to_json(const TrainReport& report);

struct StepPrediction {
  double y_hat = 0.5;
  double kappa = 1.0;
  double sigma_l1 = 0.0;
  int label = 0;
  bool scored = false;  // positions with history (t >= 1) within the window
};

struct EvalResult {
  std::optional<double> auc;  // absent when labels are single-class
  double acc = 0;
  Index n_scored = 0;
  std::vector<std::vector<StepPrediction>> per_sequence;  // aligned with input windows
};

// Deterministic batched evaluation over pre-windowed sequences.
EvalResult evaluate_model(KeenModel& model, const std::vector<StudentSequence>& windows,
                          Index batch_size);

struct TrainResult {
  KeenModel model;
  TrainReport report;
};

// Minibatch Adam on the multi-task loss with per-epoch validation and
// best-AUC model selection. Sequences are windowed internally.
TrainResult train(const TrainConfig& cfg, const std::vector<StudentSequence>& train_seqs,
                  const std::vector<StudentSequence>& val_seqs, Index n_questions);

struct FoldMetrics {
  int fold = 0;
  double auc = 0;
  double acc = 0;
};

struct CvReport {
  std::vector<FoldMetrics> per_fold;
  double auc_mean = 0, auc_std = 0;
  double acc_mean = 0, acc_std = 0;
};

nlohmann::json to_json(const CvReport& report);

// (mean, sample standard deviation); std is 0 for fewer than two values.
std::pair<double, double> mean_sample_std(const std::vector<double>& xs);

CvReport cross_validate(const TrainConfig& cfg, const Dataset& data);

struct AnomalyGroupStats {
  Index count = 0;
  double mean_sigma_l1 = 0;
  double mean_kappa = 0;
};

struct AnomalyTrajectory {
  std::string student_id;
  Index step = 0;          // window-local interaction index of the anomaly
  std::string kind;        // slip | guess
  std::vector<double> y_hat;  // predictions at steps [step-2, step+2] clipped
};

// Post-interaction statistics: an interaction at t is associated with the
// predictor-facing variance and confidence at t+1, the first position that
// can attend it. Final positions of each window are not counted.
struct AnomalyReport {
  AnomalyGroupStats slip, guess, clean;
  Index total_steps = 0;  // slip + guess + clean counts
  std::vector<AnomalyTrajectory> trajectories;
};

nlohmann::json to_json(const AnomalyReport& report);

AnomalyReport anomaly_sensitivity(KeenModel& model,
                                  const std::vector<StudentSequence>& windows,
                                  Index batch_size);

}  // namespace keenkt
