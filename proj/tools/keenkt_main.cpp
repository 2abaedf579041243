// keenkt: simulate / train / evaluate / cross-validate / inspect / gradcheck
// over JSON configs and the interaction-log CSV format.
//
// Exit codes: 0 success, 1 runtime failure, 2 config or validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "keenkt/config_json.hpp"
#include "keenkt/gradcheck.hpp"
#include "keenkt/trainer.hpp"

namespace {

using namespace keenkt;
using nlohmann::json;

constexpr std::uint64_t kTagValSplit = 0x55;

void write_text_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path tmp(path + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << content;
    if (!out) throw ParseError("write to '" + path + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

struct CommonArgs {
  std::string config_path;
  std::string data_path;
  std::string out_path;
  std::string checkpoint_path;
  std::string report_path;
  std::string student_id;
  std::vector<std::string> ablate;
  std::int64_t steps = -1;
  std::int64_t seed = -1;
  int folds = 0;
};

CliConfig resolve_config(const CommonArgs& args) {
  CliConfig cfg =
      args.config_path.empty() ? CliConfig{} : load_cli_config(args.config_path);
  if (args.seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    cfg.sim.seed = static_cast<std::uint64_t>(args.seed);
  }
  if (args.folds > 0) cfg.train.folds = args.folds;
  for (const std::string& a : args.ablate) {
    if (a == "cl") cfg.train.ablate_cl = true;
    else if (a == "diff") cfg.train.ablate_diff = true;
    else if (a == "nig") cfg.train.ablate_nig = true;
    else throw ConfigError("--ablate must be one of cl, diff, nig");
  }
  if (!args.data_path.empty()) cfg.data_path = args.data_path;
  if (!args.out_path.empty()) cfg.out_path = args.out_path;
  cfg.train.validate();
  cfg.sim.validate();
  return cfg;
}

std::string require_data(const CliConfig& cfg) {
  if (!cfg.data_path) throw ConfigError("no data path given (--data or config \"data\")");
  return *cfg.data_path;
}

std::string require_out(const CliConfig& cfg) {
  if (!cfg.out_path) throw ConfigError("no output path given (--out or config \"out\")");
  return *cfg.out_path;
}

void emit(const json& j, const std::string& out_path) {
  std::string text = j.dump(2) + "\n";
  if (!out_path.empty()) write_text_atomic(out_path, text);
  std::cout << text;
}

int run_simulate(const CommonArgs& args) {
  CliConfig cfg = resolve_config(args);
  std::string out = require_out(cfg);
  Dataset data = simulate(cfg.sim);
  std::string tmp = out + ".tmp";
  write_csv(data, tmp);
  std::filesystem::rename(tmp, out);
  return 0;
}

std::pair<std::vector<StudentSequence>, std::vector<StudentSequence>> val_split(
    const Dataset& data, const TrainConfig& cfg) {
  const auto& seqs = data.sequences;
  if (seqs.size() < 2) return {seqs, seqs};  // degenerate: validate on the train set
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(cfg.seed, kTagValSplit));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i);
    std::swap(order[i], order[d(rng)]);
  }
  auto n_val = static_cast<std::size_t>(
      std::max(1.0, std::floor(static_cast<double>(seqs.size()) * cfg.val_fraction)));
  n_val = std::min(n_val, seqs.size() - 1);
  std::vector<StudentSequence> train_seqs, val_seqs;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - n_val ? train_seqs : val_seqs).push_back(seqs[order[i]]);
  }
  return {train_seqs, val_seqs};
}

int run_train(const CommonArgs& args) {
  CliConfig cfg = resolve_config(args);
  std::string data_path = require_data(cfg);
  std::string out = require_out(cfg);
  Dataset data = load_csv(data_path);
  auto [train_seqs, val_seqs] = val_split(data, cfg.train);
  TrainResult res = train(cfg.train, train_seqs, val_seqs, data.n_questions());
  save_checkpoint(res.model, CheckpointVocab{data.question_ids, data.question_concepts},
                  out);
  json report = to_json(res.report);
  if (!args.report_path.empty()) write_text_atomic(args.report_path, report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_evaluate(const CommonArgs& args) {
  CliConfig cfg = resolve_config(args);
  if (args.checkpoint_path.empty()) throw ConfigError("evaluate requires --checkpoint");
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint_path);
  Dataset data = load_csv(require_data(cfg));
  auto seqs = remap_sequences(data, ck.vocab.question_ids);
  auto windows = window_all(seqs, cfg.train.max_seq_len);
  EvalResult ev = evaluate_model(ck.model, windows, cfg.train.batch);
  json out{{"acc", ev.acc}, {"n_scored", ev.n_scored}};
  out["auc"] = ev.auc ? json(*ev.auc) : json(nullptr);
  if (data.has_anomaly_labels()) {
    out["anomaly_sensitivity"] =
        to_json(anomaly_sensitivity(ck.model, windows, cfg.train.batch));
  }
  emit(out, args.out_path);
  return 0;
}

int run_cross_validate(const CommonArgs& args) {
  CliConfig cfg = resolve_config(args);
  Dataset data = load_csv(require_data(cfg));
  CvReport report = cross_validate(cfg.train, data);
  emit(to_json(report), args.out_path);
  return 0;
}

json slice_json(const Tensor& t, Index row, Index d) {
  json arr = json::array();
  for (Index k = 0; k < d; ++k) arr.push_back(t[row * d + k]);
  return arr;
}

int run_inspect(const CommonArgs& args) {
  CliConfig cfg = resolve_config(args);
  if (args.checkpoint_path.empty()) throw ConfigError("inspect requires --checkpoint");
  if (args.student_id.empty()) throw ConfigError("inspect requires --student");
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint_path);
  if (ck.model.config().ablate_nig) {
    throw ConfigError("checkpoint was trained without distributional embeddings");
  }
  Dataset data = load_csv(require_data(cfg));
  auto seqs = remap_sequences(data, ck.vocab.question_ids);
  const StudentSequence* target = nullptr;
  for (const auto& s : seqs) {
    if (s.student_id == args.student_id) {
      target = &s;
      break;
    }
  }
  if (!target) throw ConfigError("student '" + args.student_id + "' not in the dataset");

  Index limit = args.steps > 0 ? args.steps : target->length();
  Index d = ck.model.config().d;
  json records = json::array();
  Index global_step = 0;
  for (const StudentSequence& w : window(*target, cfg.train.max_seq_len)) {
    if (static_cast<Index>(records.size()) >= limit) break;
    Batch batch = make_batch({&w}, ck.model.n_questions());
    Tape tape;
    auto out = ck.model.forward(tape, batch, RunMode::kEval, nullptr);
    const EncodedStreams& enc = *out.encoded;
    for (Index t = 0; t < w.length() && static_cast<Index>(records.size()) < limit; ++t) {
      json rec;
      rec["step"] = global_step++;
      rec["question_id"] =
          ck.vocab.question_ids[static_cast<std::size_t>(w.questions[static_cast<std::size_t>(t)])];
      rec["correct"] = w.responses[static_cast<std::size_t>(t)];
      if (w.has_anomaly_labels) {
        rec["anomaly"] = anomaly_name(w.anomalies[static_cast<std::size_t>(t)]);
      }
      rec["mu"] = slice_json(enc.x_mu.value(), t, d);
      rec["alpha"] = slice_json(enc.x_alpha.value(), t, d);
      rec["beta"] = slice_json(enc.x_beta.value(), t, d);
      rec["delta"] = slice_json(enc.x_delta.value(), t, d);
      rec["mean"] = slice_json(enc.x_mean.value(), t, d);
      rec["var"] = slice_json(enc.x_var.value(), t, d);
      rec["kappa"] = out.kappa.value()[t];
      rec["y_hat"] = out.y_hat.value()[t];
      records.push_back(std::move(rec));
    }
  }
  emit(records, args.out_path);
  return 0;
}

int run_gradcheck(const CommonArgs& args) {
  std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 42;
  std::vector<GradCheckResult> results = check_all_ops(seed);
  results.push_back(check_total_loss_graph(seed));
  bool all_pass = true;
  std::printf("%-28s %12s   %s\n", "op", "max_rel_err", "status");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e   %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KeenKT: distributional knowledge tracing"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool with_data) {
    cmd->add_option("--config", args.config_path, "JSON config path");
    cmd->add_option("--seed", args.seed, "override the workflow seed");
    if (with_data) cmd->add_option("--data", args.data_path, "interaction CSV path");
    return cmd;
  };

  CLI::App* sim = add_common(app.add_subcommand("simulate", "generate a synthetic dataset"),
                             false);
  sim->add_option("--out", args.out_path, "output CSV path");

  CLI::App* tr = add_common(app.add_subcommand("train", "train a model"), true);
  tr->add_option("--out", args.out_path, "checkpoint output path");
  tr->add_option("--report", args.report_path, "also write the train report here");
  tr->add_option("--ablate", args.ablate, "drop a component: cl, diff or nig");

  CLI::App* ev = add_common(app.add_subcommand("evaluate", "evaluate a checkpoint"), true);
  ev->add_option("--checkpoint", args.checkpoint_path, "checkpoint path");
  ev->add_option("--out", args.out_path, "metrics JSON output path");

  CLI::App* cv = add_common(
      app.add_subcommand("cross-validate", "student-level k-fold cross-validation"), true);
  cv->add_option("--folds", args.folds, "number of folds");
  cv->add_option("--ablate", args.ablate, "drop a component: cl, diff or nig");
  cv->add_option("--out", args.out_path, "report JSON output path");

  CLI::App* insp =
      add_common(app.add_subcommand("inspect", "per-step distributional dump"), true);
  insp->add_option("--checkpoint", args.checkpoint_path, "checkpoint path");
  insp->add_option("--student", args.student_id, "student id to inspect");
  insp->add_option("--steps", args.steps, "limit the number of steps dumped");
  insp->add_option("--out", args.out_path, "dump JSON output path");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--seed", args.seed, "probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) return run_simulate(args);
    if (tr->parsed()) return run_train(args);
    if (ev->parsed()) return run_evaluate(args);
    if (cv->parsed()) return run_cross_validate(args);
    if (insp->parsed()) return run_inspect(args);
    if (gc->parsed()) return run_gradcheck(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
