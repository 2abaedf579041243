#include "keenkt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace keenkt {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("d must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (denoiser_hidden < 1) throw ConfigError("denoiser_hidden must be >= 1");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (lambda1 < 0.0) throw ConfigError("lambda1 must be >= 0");
  if (lambda2 < 0.0) throw ConfigError("lambda2 must be >= 0");
}

Batch make_batch(const std::vector<const StudentSequence*>& seqs, Index n_questions) {
  if (seqs.empty()) throw DomainError("make_batch: empty batch");
  Batch batch;
  batch.b = static_cast<Index>(seqs.size());
  for (const StudentSequence* s : seqs) {
    if (s->length() < 2) throw DomainError("make_batch: sequence shorter than 2");
    batch.t = std::max(batch.t, s->length());
    batch.lengths.push_back(s->length());
  }
  Index b = batch.b, t = batch.t;
  batch.questions = IndexArray({b, t}, std::vector<Index>(static_cast<std::size_t>(b * t), 0));
  batch.interactions =
      IndexArray({b, t}, std::vector<Index>(static_cast<std::size_t>(b * t), 0));
  batch.labels = Tensor::zeros({b, t});
  batch.valid_mask = Tensor::zeros({b, t});
  batch.predict_mask = Tensor::zeros({b, t});
  batch.attn_mask = Tensor::zeros({b, t, t});
  for (Index bi = 0; bi < b; ++bi) {
    const StudentSequence& s = *seqs[static_cast<std::size_t>(bi)];
    Index len = s.length();
    for (Index ti = 0; ti < len; ++ti) {
      Index q = s.questions[static_cast<std::size_t>(ti)];
      int r = s.responses[static_cast<std::size_t>(ti)];
      Index flat = bi * t + ti;
      batch.questions.data[static_cast<std::size_t>(flat)] = q;
      batch.interactions.data[static_cast<std::size_t>(flat)] =
          interaction_index(q, r, n_questions);
      batch.labels[flat] = static_cast<double>(r);
      batch.valid_mask[flat] = 1.0;
      if (ti >= 1) batch.predict_mask[flat] = 1.0;
    }
    // position i may only attend interactions strictly before it
    for (Index i = 0; i < t; ++i) {
      for (Index j = 0; j < std::min(i, len); ++j) {
        batch.attn_mask[(bi * t + i) * t + j] = 1.0;
      }
    }
  }
  return batch;
}

namespace {

Tensor glorot_init(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  return Tensor::randn({fan_in, fan_out}, rng,
                       std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace

KeenModel::DotBlockWeights::DotBlockWeights(int block, Index d, Index hidden,
                                            std::mt19937_64& rng)
    : wq("dblk" + std::to_string(block) + ".wq", glorot_init(d, d, rng)),
      wk("dblk" + std::to_string(block) + ".wk", glorot_init(d, d, rng)),
      wv("dblk" + std::to_string(block) + ".wv", glorot_init(d, d, rng)),
      ff_w1("dblk" + std::to_string(block) + ".ff_w1", glorot_init(d, hidden, rng)),
      ff_b1("dblk" + std::to_string(block) + ".ff_b1", Tensor::zeros({hidden})),
      ff_w2("dblk" + std::to_string(block) + ".ff_w2", glorot_init(hidden, d, rng)),
      ff_b2("dblk" + std::to_string(block) + ".ff_b2", Tensor::zeros({d})) {}

std::vector<Parameter*> KeenModel::DotBlockWeights::parameters() {
  return {&wq, &wk, &wv, &ff_w1, &ff_b1, &ff_w2, &ff_b2};
}

KeenModel::KeenModel(ModelConfig cfg, Index n_questions, std::uint64_t init_seed)
    : cfg_(cfg), n_questions_(n_questions) {
  cfg_.validate();
  if (n_questions < 1) throw ConfigError("model needs at least one question");
  std::mt19937_64 rng(init_seed);
  if (!cfg_.ablate_nig) {
    full_ = std::make_unique<FullWeights>(FullWeights{
        EncoderTables(n_questions, cfg_.d, rng),
        MsdWeights{{}, DenoiserWeights(2 * cfg_.d, cfg_.denoiser_hidden, rng)},
        PredictorWeights(3 * cfg_.d, cfg_.hidden, rng)});
    // denoiser/predictor drawn above to fix the stream; blocks follow
    full_->msd.blocks.reserve(static_cast<std::size_t>(cfg_.n_blocks));
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      full_->msd.blocks.emplace_back(i, cfg_.d, cfg_.hidden, rng);
    }
  } else {
    nonig_ = std::make_unique<NoNigWeights>(NoNigWeights{
        Parameter("det.q_emb", Tensor::randn({n_questions, cfg_.d}, rng, 0.02)),
        Parameter("det.x_emb", Tensor::randn({2 * n_questions, cfg_.d}, rng, 0.02)),
        {},
        DenoiserWeights(cfg_.d, cfg_.denoiser_hidden, rng),
        PredictorWeights(2 * cfg_.d, cfg_.hidden, rng)});
    nonig_->blocks.reserve(static_cast<std::size_t>(cfg_.n_blocks));
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      nonig_->blocks.emplace_back(i, cfg_.d, cfg_.hidden, rng);
    }
  }
}

std::vector<Parameter*> KeenModel::parameters() {
  std::vector<Parameter*> out;
  auto append = [&out](std::vector<Parameter*> ps) {
    out.insert(out.end(), ps.begin(), ps.end());
  };
  if (full_) {
    append(full_->enc.parameters());
    for (auto& blk : full_->msd.blocks) append(blk.parameters());
    append(full_->msd.denoiser.parameters());
    append(full_->pred.parameters());
  } else {
    out.push_back(&nonig_->q_emb);
    out.push_back(&nonig_->x_emb);
    for (auto& blk : nonig_->blocks) append(blk.parameters());
    append(nonig_->denoiser.parameters());
    append(nonig_->pred.parameters());
  }
  return out;
}

KeenModel::ForwardOut KeenModel::forward(Tape& tape, const Batch& batch, RunMode mode,
                                         std::mt19937_64* noise_rng) {
  if (mode == RunMode::kTrain && noise_rng == nullptr) {
    throw DomainError("forward: training mode requires a noise rng");
  }
  return full_ ? forward_full(tape, batch, mode, noise_rng)
               : forward_nonig(tape, batch, mode, noise_rng);
}

KeenModel::ForwardOut KeenModel::forward_full(Tape& tape, const Batch& batch,
                                              RunMode mode, std::mt19937_64* noise_rng) {
  MsdConfig mcfg;
  mcfg.tau = cfg_.tau;
  mcfg.noise_level = cfg_.noise_level;
  mcfg.n_blocks = cfg_.n_blocks;
  mcfg.hidden = cfg_.hidden;
  mcfg.denoiser_hidden = cfg_.denoiser_hidden;
  mcfg.aux_in_eval = cfg_.aux_in_eval;

  EncodedStreams enc = encode(tape, full_->enc, batch.questions, batch.interactions);
  MsdOutput msd = run_msd(tape, full_->msd, enc, batch.attn_mask, batch.valid_mask,
                          batch.lengths, mcfg, mode, noise_rng,
                          /*compute_mse=*/!cfg_.ablate_diff,
                          /*compute_nce=*/!cfg_.ablate_cl);
  ScoreOut score = predictor_score(tape, full_->pred, msd.h, enc.q_mean);

  ForwardOut out;
  out.sigma_l1 = l1_norm_last(msd.sigma_out);
  // gamma acts per latent dimension: the exponent uses the mean absolute
  // variance, so the usable gamma range is independent of d
  double gamma_eff = cfg_.gamma / static_cast<double>(cfg_.d);
  out.kappa = exp(scalar_mul(out.sigma_l1, -gamma_eff));
  out.y_hat = blend(tape, score.p, out.kappa);
  out.p = score.p;
  out.sigma_out = msd.sigma_out;
  out.encoded = enc;
  out.attention_weights = std::move(msd.attention_weights);

  Var labels = tape.constant(batch.labels);
  Var pmask = tape.constant(batch.predict_mask);
  out.bce = bce_loss(tape, out.y_hat, labels, pmask, cfg_.bce_normalize);
  out.mse = msd.aux_mse;
  out.nce = msd.aux_nce;
  out.total = total_loss(out.bce, out.mse, out.nce, cfg_.lambda1, cfg_.lambda2);
  return out;
}

KeenModel::ForwardOut KeenModel::forward_nonig(Tape& tape, const Batch& batch,
                                               RunMode mode, std::mt19937_64* noise_rng) {
  Index d = cfg_.d;
  Index b = batch.b, t = batch.t;
  Var q_emb = gather_rows(tape.param(nonig_->q_emb), batch.questions);
  Var x_emb = gather_rows(tape.param(nonig_->x_emb), batch.interactions);
  Var mask = tape.constant(batch.attn_mask);
  double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Var cur = q_emb;
  ForwardOut out;
  for (auto& blk : nonig_->blocks) {
    Var q = matmul(cur, tape.param(blk.wq));
    Var k = matmul(x_emb, tape.param(blk.wk));
    Var v = matmul(x_emb, tape.param(blk.wv));
    Var scores = scalar_mul(matmul(q, transpose_last_two(k)), scale);
    Var alpha = masked_softmax_last(scores, mask);
    Var x = add(matmul(alpha, v), cur);
    Var ff = add(matmul(relu(add(matmul(x, tape.param(blk.ff_w1)), tape.param(blk.ff_b1))),
                        tape.param(blk.ff_w2)),
                 tape.param(blk.ff_b2));
    cur = add(x, ff);
    out.attention_weights.push_back(tape.value(alpha));
  }
  Var h = cur;

  out.mse = tape.constant(Tensor::scalar(0.0));
  out.nce = tape.constant(Tensor::scalar(0.0));
  bool want_aux = (mode == RunMode::kTrain) || cfg_.aux_in_eval;
  if (want_aux) {
    std::mt19937_64 eval_rng(0);
    std::mt19937_64& rng = (mode == RunMode::kTrain) ? *noise_rng : eval_rng;
    double n_valid = batch.valid_mask.array().sum();
    if (!cfg_.ablate_diff) {
      Tensor element_mask({b, t, d});
      for (Index bi = 0; bi < b; ++bi) {
        for (Index ti = 0; ti < t; ++ti) {
          Eigen::Map<Eigen::ArrayXd>(element_mask.data() + (bi * t + ti) * d, d)
              .setConstant(batch.valid_mask[bi * t + ti]);
        }
      }
      out.mse = diffusion_denoise_loss(tape, nonig_->denoiser, h, element_mask,
                                       n_valid * static_cast<double>(d),
                                       cfg_.noise_level, rng);
    }
    if (!cfg_.ablate_cl && b >= 2) {
      Tensor pool({b, 1, t});
      for (Index bi = 0; bi < b; ++bi) {
        double len = static_cast<double>(batch.lengths[static_cast<std::size_t>(bi)]);
        for (Index ti = 0; ti < t; ++ti) {
          pool[bi * t + ti] = batch.valid_mask[bi * t + ti] / len;
        }
      }
      Var pool_w = tape.constant(pool);
      Var anchor = reshape(matmul(pool_w, h), {b, d});
      Tensor eps = cfg_.noise_level > 0.0 ? Tensor::randn(h.shape(), rng, cfg_.noise_level)
                                          : Tensor::zeros(h.shape());
      Var pos = reshape(matmul(pool_w, add(h, tape.constant(eps))), {b, d});
      // deterministic embeddings carry no variance stream; unit dummies make
      // the distance purely euclidean
      Var unit = tape.constant(Tensor::ones({b, d}));
      out.nce = nig_contrastive_loss(tape, anchor, unit, pos, unit, cfg_.tau);
    }
  }

  ScoreOut score = predictor_score(tape, nonig_->pred, h, q_emb);
  out.p = score.p;
  out.y_hat = score.p;  // no variance stream, so full confidence
  out.kappa = tape.constant(Tensor::ones({b, t}));
  out.sigma_l1 = tape.constant(Tensor::zeros({b, t}));

  Var labels = tape.constant(batch.labels);
  Var pmask = tape.constant(batch.predict_mask);
  out.bce = bce_loss(tape, out.y_hat, labels, pmask, cfg_.bce_normalize);
  out.total = total_loss(out.bce, out.mse, out.nce, cfg_.lambda1, cfg_.lambda2);
  return out;
}

// ---- checkpoint io ----

namespace {

void write_le(std::ofstream& out, const double* p, std::size_t n) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, p + i, 8);
      char buf[8];
      for (int j = 0; j < 8; ++j) buf[j] = static_cast<char>((bits >> (8 * j)) & 0xff);
      out.write(buf, 8);
    }
  }
}

void read_le(std::ifstream& in, double* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int j = 0; j < 8; ++j) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[j])) << (8 * j);
      }
      std::memcpy(p + i, &bits, 8);
    }
  }
}

json config_to_json(const ModelConfig& c) {
  return json{{"d", c.d},
              {"hidden", c.hidden},
              {"n_blocks", c.n_blocks},
              {"denoiser_hidden", c.denoiser_hidden},
              {"tau", c.tau},
              {"gamma", c.gamma},
              {"noise_level", c.noise_level},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"ablate_cl", c.ablate_cl},
              {"ablate_diff", c.ablate_diff},
              {"ablate_nig", c.ablate_nig},
              {"bce_normalize", c.bce_normalize},
              {"aux_in_eval", c.aux_in_eval}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<Index>();
  c.hidden = j.at("hidden").get<Index>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.denoiser_hidden = j.at("denoiser_hidden").get<Index>();
  c.tau = j.at("tau").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.noise_level = j.at("noise_level").get<double>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.ablate_cl = j.at("ablate_cl").get<bool>();
  c.ablate_diff = j.at("ablate_diff").get<bool>();
  c.ablate_nig = j.at("ablate_nig").get<bool>();
  c.bce_normalize = j.at("bce_normalize").get<bool>();
  c.aux_in_eval = j.at("aux_in_eval").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(KeenModel& model, const CheckpointVocab& vocab,
                     const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<Parameter*> params = model.parameters();

  json manifest;
  manifest["format_version"] = 1;
  manifest["model"] = config_to_json(model.config());
  manifest["n_questions"] = model.n_questions();
  manifest["question_ids"] = vocab.question_ids;
  manifest["question_concepts"] = vocab.question_concepts;
  std::string blob_name = fs::path(path).filename().string() + ".bin";
  manifest["blob"] = blob_name;

  json plist = json::array();
  Index offset = 0;
  for (Parameter* p : params) {
    plist.push_back(json{{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.size();
  }
  manifest["params"] = plist;

  fs::path blob_path = fs::path(path).parent_path() / blob_name;
  fs::path blob_tmp = blob_path;
  blob_tmp += ".tmp";
  {
    std::ofstream blob(blob_tmp, std::ios::binary);
    if (!blob) throw ParseError("cannot write '" + blob_tmp.string() + "'");
    for (Parameter* p : params) {
      write_le(blob, p->value.data(), static_cast<std::size_t>(p->value.size()));
    }
    if (!blob) throw ParseError("blob write failed at '" + blob_tmp.string() + "'");
  }
  fs::path manifest_tmp = fs::path(path);
  manifest_tmp += ".tmp";
  {
    std::ofstream mf(manifest_tmp, std::ios::binary);
    if (!mf) throw ParseError("cannot write '" + manifest_tmp.string() + "'");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw ParseError("manifest write failed");
  }
  fs::rename(blob_tmp, blob_path);
  fs::rename(manifest_tmp, fs::path(path));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream mf(path);
  if (!mf) throw ParseError("cannot open checkpoint '" + path + "'");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint manifest: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format_version").get<int>() != 1) {
      throw ParseError("unsupported checkpoint format version");
    }
    ModelConfig cfg = config_from_json(manifest.at("model"));
    auto n_questions = manifest.at("n_questions").get<Index>();
    CheckpointVocab vocab;
    vocab.question_ids = manifest.at("question_ids").get<std::vector<std::string>>();
    vocab.question_concepts =
        manifest.at("question_concepts").get<std::vector<std::string>>();

    KeenModel model(cfg, n_questions, /*init_seed=*/0);
    std::vector<Parameter*> params = model.parameters();
    const json& plist = manifest.at("params");
    if (plist.size() != params.size()) {
      throw ParseError("checkpoint parameter count mismatch");
    }
    fs::path blob_path =
        fs::path(path).parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw ParseError("cannot open blob '" + blob_path.string() + "'");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& entry = plist[i];
      if (entry.at("name").get<std::string>() != params[i]->name) {
        throw ParseError("checkpoint parameter order mismatch at '" + params[i]->name + "'");
      }
      auto shape = entry.at("shape").get<Shape>();
      if (shape != params[i]->value.shape()) {
        throw ParseError("checkpoint shape mismatch for '" + params[i]->name + "'");
      }
      blob.seekg(entry.at("offset").get<Index>() * 8);
      read_le(blob, params[i]->value.data(),
              static_cast<std::size_t>(params[i]->value.size()));
      if (!blob) throw ParseError("blob read failed for '" + params[i]->name + "'");
    }
    return LoadedCheckpoint{std::move(model), std::move(vocab)};
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace keenkt
