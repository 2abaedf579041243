#include <doctest.h>

#include <cstdio>

#include "keenkt/gradcheck.hpp"
#include "keenkt/trainer.hpp"

using namespace keenkt;

TEST_CASE("early stopping fires after exactly `patience` non-improving epochs") {
  EarlyStopper stop(3);
  // scripted metric sequence: improvements at 1 and 2, then a plateau
  CHECK(stop.update(0.6));
  CHECK(stop.update(0.7));
  CHECK_FALSE(stop.update(0.7));  // ties don't count as improvement
  CHECK_FALSE(stop.should_stop());
  CHECK_FALSE(stop.update(0.65));
  CHECK_FALSE(stop.should_stop());
  CHECK_FALSE(stop.update(0.69));
  CHECK(stop.should_stop());  // exactly 3 non-improving updates
  CHECK(stop.best_index() == 2);
}

TEST_CASE("mean and sample std aggregation") {
  auto [m1, s1] = mean_sample_std({0.8, 0.8, 0.9, 0.9, 0.85});
  CHECK(m1 == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(s1 == doctest::Approx(0.05).epsilon(1e-9));

  auto [m2, s2] = mean_sample_std({0.7, 0.7, 0.7});
  CHECK(m2 == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(s2 == 0.0);
}

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.d = 8;
  cfg.hidden = 16;
  cfg.denoiser_hidden = 16;
  cfg.batch = 8;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.max_seq_len = 50;
  cfg.seed = 11;
  return cfg;
}

Dataset tiny_dataset(std::uint64_t seed = 21) {
  SimulatorConfig sim;
  sim.n_students = 24;
  sim.n_questions = 10;
  sim.n_concepts = 2;
  sim.seq_len_min = 8;
  sim.seq_len_max = 16;
  sim.seed = seed;
  return simulate(sim);
}

}  // namespace

TEST_CASE("a tiny training run completes with sane report fields") {
  Dataset data = tiny_dataset();
  std::vector<StudentSequence> train_seqs(data.sequences.begin(),
                                          data.sequences.begin() + 18);
  std::vector<StudentSequence> val_seqs(data.sequences.begin() + 18,
                                        data.sequences.end());
  TrainResult res = train(tiny_config(), train_seqs, val_seqs, data.n_questions());
  CHECK(res.report.epochs.size() == 3);
  CHECK(res.report.best_epoch >= 1);
  CHECK(res.report.best_epoch <= 3);
  REQUIRE(res.report.best_val_auc.has_value());
  CHECK(*res.report.best_val_auc >= 0.0);
  CHECK(*res.report.best_val_auc <= 1.0);
  CHECK(res.report.best_val_acc >= 0.0);
  CHECK(res.report.best_val_acc <= 1.0);
  for (const EpochStats& e : res.report.epochs) {
    CHECK(std::isfinite(e.loss_total));
    CHECK(e.loss_total >= e.loss_bce - 1e-12);
  }
  // best-AUC selection never loses to the first epoch
  REQUIRE(res.report.epochs[0].val_auc.has_value());
  CHECK(*res.report.best_val_auc >= *res.report.epochs[0].val_auc);
}

TEST_CASE("fixed-seed training reproduces the report bit-exactly") {
  Dataset data = tiny_dataset();
  std::vector<StudentSequence> train_seqs(data.sequences.begin(),
                                          data.sequences.begin() + 18);
  std::vector<StudentSequence> val_seqs(data.sequences.begin() + 18,
                                        data.sequences.end());
  TrainResult a = train(tiny_config(), train_seqs, val_seqs, data.n_questions());
  TrainResult b = train(tiny_config(), train_seqs, val_seqs, data.n_questions());
  CHECK(to_json(a.report).dump() == to_json(b.report).dump());
}

TEST_CASE("single-class validation reports undefined AUC and perfect ACC") {
  StudentSequence s;
  s.student_id = "only";
  for (int i = 0; i < 10; ++i) {
    s.questions.push_back(0);
    s.responses.push_back(1);
    s.anomalies.push_back(AnomalyLabel::kNone);
  }
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.lr = 0.05;  // one batch per epoch; converge quickly to always-correct
  TrainResult res = train(cfg, {s}, {s}, 1);
  CHECK_FALSE(res.report.best_val_auc.has_value());
  CHECK(res.report.best_val_acc == 1.0);
  CHECK(to_json(res.report)["epochs"][0]["val_auc"].is_null());
}

TEST_CASE("trained checkpoint reproduces validation metrics bit-exactly") {
  Dataset data = tiny_dataset(31);
  std::vector<StudentSequence> train_seqs(data.sequences.begin(),
                                          data.sequences.begin() + 18);
  std::vector<StudentSequence> val_seqs(data.sequences.begin() + 18,
                                        data.sequences.end());
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 2;
  cfg.patience = 2;
  TrainResult res = train(cfg, train_seqs, val_seqs, data.n_questions());

  auto val_windows = window_all(val_seqs, cfg.max_seq_len);
  EvalResult before = evaluate_model(res.model, val_windows, cfg.batch);

  CheckpointVocab vocab{data.question_ids, data.question_concepts};
  save_checkpoint(res.model, vocab, "keenkt_train_ckpt.json");
  LoadedCheckpoint loaded = load_checkpoint("keenkt_train_ckpt.json");
  std::remove("keenkt_train_ckpt.json");
  std::remove("keenkt_train_ckpt.json.bin");
  EvalResult after = evaluate_model(loaded.model, val_windows, cfg.batch);

  REQUIRE(before.auc.has_value());
  REQUIRE(after.auc.has_value());
  CHECK(*before.auc == *after.auc);
  CHECK(before.acc == after.acc);
}

TEST_CASE("anomaly sensitivity requires labels and partitions counted steps") {
  Dataset data = tiny_dataset(41);
  KeenModel model(tiny_config().model_config(), data.n_questions(), 3);

  std::vector<StudentSequence> unlabeled = data.sequences;
  for (auto& s : unlabeled) {
    std::fill(s.anomalies.begin(), s.anomalies.end(), AnomalyLabel::kNone);
  }
  CHECK_THROWS_AS(anomaly_sensitivity(model, unlabeled, 8), DomainError);

  auto windows = window_all(data.sequences, 50);
  AnomalyReport report = anomaly_sensitivity(model, windows, 8);
  Index expected = 0;
  for (const auto& w : windows) expected += w.length() - 1;
  CHECK(report.total_steps == expected);
  CHECK(report.slip.count + report.guess.count + report.clean.count == expected);
  CHECK(report.trajectories.size() ==
        static_cast<std::size_t>(report.slip.count + report.guess.count));
}

TEST_CASE("composed total-loss gradients match finite differences") {
  GradCheckResult res = check_total_loss_graph(/*seed=*/42);
  INFO("max_rel_err ", res.max_rel_err);
  CHECK(res.pass);
}
