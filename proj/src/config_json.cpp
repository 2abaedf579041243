#include "keenkt/config_json.hpp"

#include <fstream>
#include <set>

namespace keenkt {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& section,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError("'" + section + "' must be a JSON object");
  }
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in " + section);
    }
  }
}

template <typename T>
void read_field(const json& j, const std::string& section, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + section + "." + key);
  }
}

void parse_train(const json& j, TrainConfig& t) {
  require_keys(j, "train",
               {"d", "hidden", "batch", "lr", "max_epochs", "patience", "lambda1",
                "lambda2", "tau", "gamma", "noise_level", "max_seq_len", "seed",
                "folds", "n_blocks", "denoiser_hidden", "val_fraction",
                "bce_normalize", "aux_in_eval"});
  read_field(j, "train", "d", t.d);
  read_field(j, "train", "hidden", t.hidden);
  read_field(j, "train", "batch", t.batch);
  read_field(j, "train", "lr", t.lr);
  read_field(j, "train", "max_epochs", t.max_epochs);
  read_field(j, "train", "patience", t.patience);
  read_field(j, "train", "lambda1", t.lambda1);
  read_field(j, "train", "lambda2", t.lambda2);
  read_field(j, "train", "tau", t.tau);
  read_field(j, "train", "gamma", t.gamma);
  read_field(j, "train", "noise_level", t.noise_level);
  read_field(j, "train", "max_seq_len", t.max_seq_len);
  read_field(j, "train", "seed", t.seed);
  read_field(j, "train", "folds", t.folds);
  read_field(j, "train", "n_blocks", t.n_blocks);
  read_field(j, "train", "denoiser_hidden", t.denoiser_hidden);
  read_field(j, "train", "val_fraction", t.val_fraction);
  read_field(j, "train", "bce_normalize", t.bce_normalize);
  read_field(j, "train", "aux_in_eval", t.aux_in_eval);
}

void parse_sim(const json& j, SimulatorConfig& s) {
  require_keys(j, "simulate",
               {"n_students", "n_questions", "n_concepts", "p_learn", "p_slip",
                "p_guess", "mastery_prior", "seq_len_min", "seq_len_max", "seed"});
  read_field(j, "simulate", "n_students", s.n_students);
  read_field(j, "simulate", "n_questions", s.n_questions);
  read_field(j, "simulate", "n_concepts", s.n_concepts);
  read_field(j, "simulate", "p_learn", s.p_learn);
  read_field(j, "simulate", "p_slip", s.p_slip);
  read_field(j, "simulate", "p_guess", s.p_guess);
  read_field(j, "simulate", "mastery_prior", s.mastery_prior);
  read_field(j, "simulate", "seq_len_min", s.seq_len_min);
  read_field(j, "simulate", "seq_len_max", s.seq_len_max);
  read_field(j, "simulate", "seed", s.seed);
}

}  // namespace

CliConfig parse_cli_config(const json& j) {
  require_keys(j, "config root", {"train", "simulate", "data", "out"});
  CliConfig cfg;
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("simulate")) parse_sim(j.at("simulate"), cfg.sim);
  if (j.contains("data")) {
    std::string p;
    read_field(j, "root", "data", p);
    cfg.data_path = p;
  }
  if (j.contains("out")) {
    std::string p;
    read_field(j, "root", "out", p);
    cfg.out_path = p;
  }
  cfg.train.validate();
  cfg.sim.validate();
  return cfg;
}

CliConfig load_cli_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_cli_config(j);
}

}  // namespace keenkt
