#include "keenkt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "keenkt/optimizer.hpp"

namespace keenkt {

using nlohmann::json;

namespace {
// sub-seed tags; arbitrary but fixed
constexpr std::uint64_t kTagInit = 0x11;
constexpr std::uint64_t kTagShuffle = 0x22;
constexpr std::uint64_t kTagNoise = 0x33;
constexpr std::uint64_t kTagFold = 0x1000;
}  // namespace

void TrainConfig::validate() const {
  if (d < 1) throw ConfigError("d must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (patience > max_epochs) throw ConfigError("patience must be <= max_epochs");
  if (lambda1 < 0.0) throw ConfigError("lambda1 must be >= 0");
  if (lambda2 < 0.0) throw ConfigError("lambda2 must be >= 0");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (denoiser_hidden < 0) throw ConfigError("denoiser_hidden must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0,1)");
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.d = d;
  m.hidden = hidden;
  m.n_blocks = n_blocks;
  m.denoiser_hidden = denoiser_hidden > 0 ? denoiser_hidden : hidden;
  m.tau = tau;
  m.gamma = gamma;
  m.noise_level = noise_level;
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.ablate_cl = ablate_cl;
  m.ablate_diff = ablate_diff;
  m.ablate_nig = ablate_nig;
  m.bce_normalize = bce_normalize;
  m.aux_in_eval = aux_in_eval;
  return m;
}

json to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const EpochStats& e : report.epochs) {
    json j{{"epoch", e.epoch},
           {"loss_total", e.loss_total},
           {"loss_bce", e.loss_bce},
           {"loss_mse", e.loss_mse},
           {"loss_nce", e.loss_nce},
           {"val_acc", e.val_acc}};
    j["val_auc"] = e.val_auc ? json(*e.val_auc) : json(nullptr);
    epochs.push_back(std::move(j));
  }
  json out{{"epochs", std::move(epochs)},
           {"best_epoch", report.best_epoch},
           {"best_val_acc", report.best_val_acc},
           {"stopped_early", report.stopped_early},
           {"n_epochs_run", report.epochs.size()}};
  out["best_val_auc"] = report.best_val_auc ? json(*report.best_val_auc) : json(nullptr);
  return out;
}

EvalResult evaluate_model(KeenModel& model, const std::vector<StudentSequence>& windows,
                          Index batch_size) {
  if (windows.empty()) throw DomainError("evaluate_model: no sequences");
  if (batch_size < 1) throw DomainError("evaluate_model: batch_size must be >= 1");
  EvalResult result;
  result.per_sequence.resize(windows.size());
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t start = 0; start < windows.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const StudentSequence*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&windows[i]);
    Batch batch = make_batch(chunk, model.n_questions());
    Tape tape;
    KeenModel::ForwardOut out = model.forward(tape, batch, RunMode::kEval, nullptr);
    const Tensor& y = out.y_hat.value();
    const Tensor& kappa = out.kappa.value();
    const Tensor& sig = out.sigma_l1.value();
    for (std::size_t i = start; i < end; ++i) {
      const StudentSequence& seq = windows[i];
      Index bi = static_cast<Index>(i - start);
      auto& preds = result.per_sequence[i];
      preds.resize(static_cast<std::size_t>(seq.length()));
      for (Index t = 0; t < seq.length(); ++t) {
        StepPrediction& sp = preds[static_cast<std::size_t>(t)];
        Index flat = bi * batch.t + t;
        sp.y_hat = y[flat];
        sp.kappa = kappa[flat];
        sp.sigma_l1 = sig[flat];
        sp.label = seq.responses[static_cast<std::size_t>(t)];
        sp.scored = t >= 1;
        if (sp.scored) {
          scores.push_back(sp.y_hat);
          labels.push_back(sp.label);
        }
      }
    }
  }
  result.n_scored = static_cast<Index>(scores.size());
  result.acc = acc(scores, labels);
  try {
    result.auc = auc(scores, labels);
  } catch (const AucUndefinedError&) {
    result.auc = std::nullopt;
  }
  return result;
}

namespace {

std::vector<Tensor> snapshot_params(const std::vector<Parameter*>& params) {
  std::vector<Tensor> snap;
  snap.reserve(params.size());
  for (Parameter* p : params) snap.push_back(p->value);
  return snap;
}

void restore_params(const std::vector<Parameter*>& params, const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<StudentSequence>& train_seqs,
                  const std::vector<StudentSequence>& val_seqs, Index n_questions) {
  cfg.validate();
  if (train_seqs.empty()) throw DomainError("train: empty training split");
  if (val_seqs.empty()) throw DomainError("train: empty validation split");

  std::vector<StudentSequence> train_windows = window_all(train_seqs, cfg.max_seq_len);
  std::vector<StudentSequence> val_windows = window_all(val_seqs, cfg.max_seq_len);
  if (train_windows.empty() || val_windows.empty()) {
    throw DomainError("train: windowing produced no usable sequences");
  }

  KeenModel model(cfg.model_config(), n_questions, derive_seed(cfg.seed, kTagInit));
  std::vector<Parameter*> params = model.parameters();
  AdamOptimizer opt(params, cfg.lr);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, kTagShuffle));
  std::mt19937_64 noise_rng(derive_seed(cfg.seed, kTagNoise));

  TrainReport report;
  EarlyStopper stopper(cfg.patience);
  std::vector<Tensor> best_snapshot = snapshot_params(params);
  std::optional<double> best_auc;
  double best_acc = 0;
  int best_epoch = 0;

  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> d(0, i);
      std::swap(order[i], order[d(shuffle_rng)]);
    }
    double w_total = 0, l_total = 0, l_bce = 0, l_mse = 0, l_nce = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<const StudentSequence*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(&train_windows[order[i]]);
      Batch batch = make_batch(chunk, n_questions);
      Tape tape;
      try {
        KeenModel::ForwardOut out = model.forward(tape, batch, RunMode::kTrain, &noise_rng);
        double w = static_cast<double>(chunk.size());
        l_total += w * out.total.value().item();
        l_bce += w * out.bce.value().item();
        l_mse += w * out.mse.value().item();
        l_nce += w * out.nce.value().item();
        w_total += w;
        tape.backward(out.total);
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ": " + e.what());
      }
      opt.step();
      opt.zero_grad();
    }

    EvalResult val = evaluate_model(model, val_windows, cfg.batch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss_total = l_total / w_total;
    stats.loss_bce = l_bce / w_total;
    stats.loss_mse = l_mse / w_total;
    stats.loss_nce = l_nce / w_total;
    stats.val_auc = val.auc;
    stats.val_acc = val.acc;
    report.epochs.push_back(stats);

    // selection metric: AUC when defined, ACC as the degenerate fallback
    double metric = val.auc ? *val.auc : val.acc;
    if (stopper.update(metric)) {
      best_snapshot = snapshot_params(params);
      best_auc = val.auc;
      best_acc = val.acc;
      best_epoch = epoch;
    }
    if (stopper.should_stop()) {
      report.stopped_early = true;
      break;
    }
  }

  restore_params(params, best_snapshot);
  report.best_epoch = best_epoch;
  report.best_val_auc = best_auc;
  report.best_val_acc = best_acc;
  return TrainResult{std::move(model), std::move(report)};
}

json to_json(const CvReport& report) {
  json folds = json::array();
  for (const FoldMetrics& f : report.per_fold) {
    folds.push_back(json{{"fold", f.fold}, {"auc", f.auc}, {"acc", f.acc}});
  }
  return json{{"per_fold", std::move(folds)}, {"auc_mean", report.auc_mean},
              {"auc_std", report.auc_std},   {"acc_mean", report.acc_mean},
              {"acc_std", report.acc_std}};
}

std::pair<double, double> mean_sample_std(const std::vector<double>& xs) {
  if (xs.empty()) throw DomainError("mean_sample_std: empty input");
  bool all_equal = true;
  for (double x : xs) all_equal = all_equal && (x == xs.front());
  if (all_equal) return {xs.front(), 0.0};  // exact, not accumulation noise
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

CvReport cross_validate(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  FoldSplit split = split_folds(data.sequences, cfg.folds, derive_seed(cfg.seed, kTagFold));
  CvReport report;
  std::vector<double> aucs, accs;
  for (int k = 0; k < cfg.folds; ++k) {
    std::vector<StudentSequence> train_seqs, val_seqs;
    for (const StudentSequence& s : data.sequences) {
      (split.fold(s.student_id) == k ? val_seqs : train_seqs).push_back(s);
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, kTagFold + 1 + static_cast<std::uint64_t>(k));
    TrainResult res = train(fold_cfg, train_seqs, val_seqs, data.n_questions());
    if (!res.report.best_val_auc) {
      throw DomainError("cross_validate: AUC undefined on fold " + std::to_string(k));
    }
    FoldMetrics fm;
    fm.fold = k;
    fm.auc = *res.report.best_val_auc;
    fm.acc = res.report.best_val_acc;
    report.per_fold.push_back(fm);
    aucs.push_back(fm.auc);
    accs.push_back(fm.acc);
  }
  std::tie(report.auc_mean, report.auc_std) = mean_sample_std(aucs);
  std::tie(report.acc_mean, report.acc_std) = mean_sample_std(accs);
  return report;
}

json to_json(const AnomalyReport& report) {
  auto group = [](const AnomalyGroupStats& g) {
    return json{{"count", g.count},
                {"mean_sigma_l1", g.mean_sigma_l1},
                {"mean_kappa", g.mean_kappa}};
  };
  json traj = json::array();
  for (const AnomalyTrajectory& t : report.trajectories) {
    traj.push_back(json{{"student_id", t.student_id},
                        {"step", t.step},
                        {"kind", t.kind},
                        {"y_hat", t.y_hat}});
  }
  return json{{"slip", group(report.slip)},
              {"guess", group(report.guess)},
              {"clean", group(report.clean)},
              {"total_steps", report.total_steps},
              {"trajectories", std::move(traj)}};
}

AnomalyReport anomaly_sensitivity(KeenModel& model,
                                  const std::vector<StudentSequence>& windows,
                                  Index batch_size) {
  bool any_label = false;
  for (const StudentSequence& s : windows) {
    for (AnomalyLabel a : s.anomalies) {
      if (a != AnomalyLabel::kNone) {
        any_label = true;
        break;
      }
    }
    if (any_label) break;
  }
  if (!any_label) throw DomainError("anomaly_sensitivity: no labeled anomalies");

  EvalResult eval = evaluate_model(model, windows, batch_size);
  AnomalyReport report;
  double slip_sigma = 0, slip_kappa = 0, guess_sigma = 0, guess_kappa = 0,
         clean_sigma = 0, clean_kappa = 0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const StudentSequence& seq = windows[w];
    const auto& preds = eval.per_sequence[w];
    for (Index t = 0; t + 1 < seq.length(); ++t) {
      const StepPrediction& next = preds[static_cast<std::size_t>(t + 1)];
      AnomalyLabel label = seq.anomalies[static_cast<std::size_t>(t)];
      switch (label) {
        case AnomalyLabel::kSlip:
          ++report.slip.count;
          slip_sigma += next.sigma_l1;
          slip_kappa += next.kappa;
          break;
        case AnomalyLabel::kGuess:
          ++report.guess.count;
          guess_sigma += next.sigma_l1;
          guess_kappa += next.kappa;
          break;
        case AnomalyLabel::kNone:
          ++report.clean.count;
          clean_sigma += next.sigma_l1;
          clean_kappa += next.kappa;
          break;
      }
      if (label != AnomalyLabel::kNone) {
        AnomalyTrajectory traj;
        traj.student_id = seq.student_id;
        traj.step = t;
        traj.kind = anomaly_name(label);
        for (Index u = std::max<Index>(0, t - 2);
             u <= std::min<Index>(seq.length() - 1, t + 2); ++u) {
          traj.y_hat.push_back(preds[static_cast<std::size_t>(u)].y_hat);
        }
        report.trajectories.push_back(std::move(traj));
      }
    }
  }
  if (report.slip.count > 0) {
    report.slip.mean_sigma_l1 = slip_sigma / static_cast<double>(report.slip.count);
    report.slip.mean_kappa = slip_kappa / static_cast<double>(report.slip.count);
  }
  if (report.guess.count > 0) {
    report.guess.mean_sigma_l1 = guess_sigma / static_cast<double>(report.guess.count);
    report.guess.mean_kappa = guess_kappa / static_cast<double>(report.guess.count);
  }
  if (report.clean.count > 0) {
    report.clean.mean_sigma_l1 = clean_sigma / static_cast<double>(report.clean.count);
    report.clean.mean_kappa = clean_kappa / static_cast<double>(report.clean.count);
  }
  report.total_steps = report.slip.count + report.guess.count + report.clean.count;
  return report;
}

}  // namespace keenkt
