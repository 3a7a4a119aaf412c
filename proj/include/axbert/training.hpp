#pragma once

// Corruption pretraining and combined-objective optimization. The encoder is
// trained on L = lambda * L_C + (1 - lambda) * L_A; the translator is trained
// on L_F alone. Both are built on one tape per batch and back-propagated
// separately, so neither loss can leak gradient into the other's parameters.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "axbert/akn.hpp"
#include "axbert/alignment.hpp"
#include "axbert/autodiff.hpp"
#include "axbert/checkpoint.hpp"
#include "axbert/encoder.hpp"
#include "axbert/errors.hpp"
#include "axbert/regulator.hpp"

namespace axbert {

struct TrainConfig {
  double lambda = 0.8;
  double lr_encoder = 2e-5;
  double lr_translator = 4e-5;
  int epochs = 30;
  int batch_size = 32;
  double corruption_rate = 0.135;
  std::uint64_t seed = 1;
  double ridge = kDefaultRidge;
  double inv_eps = 1e-6;
  int inv_every_k_steps = 1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global L2 norm for encoder gradients; 0 disables
  int warmup_steps = 0;
  bool regulate_in_training = false;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("TrainConfig: lambda must be in [0, 1]");
    if (!(lr_encoder > 0.0) || !(lr_translator > 0.0)) throw ArgumentError("TrainConfig: learning rates must be > 0");
    if (epochs < 1 || batch_size < 1) throw ArgumentError("TrainConfig: epochs and batch_size must be >= 1");
    if (!(corruption_rate > 0.0 && corruption_rate < 1.0)) throw ArgumentError("TrainConfig: corruption_rate must be in (0, 1)");
    if (!(ridge >= 0.0)) throw ArgumentError("TrainConfig: ridge must be >= 0");
    if (!(inv_eps > 0.0)) throw ArgumentError("TrainConfig: inv_eps must be > 0");
    if (inv_every_k_steps < 1) throw ArgumentError("TrainConfig: inv_every_k_steps must be >= 1");
    if (!(weight_decay >= 0.0) || !(grad_clip >= 0.0) || warmup_steps < 0)
      throw ArgumentError("TrainConfig: weight_decay, grad_clip, warmup_steps must be >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"lr_encoder", c.lr_encoder},
          {"lr_translator", c.lr_translator},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"corruption_rate", c.corruption_rate},
          {"seed", c.seed},
          {"ridge", c.ridge},
          {"inv_eps", c.inv_eps},
          {"inv_every_k_steps", c.inv_every_k_steps},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"warmup_steps", c.warmup_steps},
          {"regulate_in_training", c.regulate_in_training}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.lambda = j.value("lambda", c.lambda);
  c.lr_encoder = j.value("lr_encoder", c.lr_encoder);
  c.lr_translator = j.value("lr_translator", c.lr_translator);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.corruption_rate = j.value("corruption_rate", c.corruption_rate);
  c.seed = j.value("seed", c.seed);
  c.ridge = j.value("ridge", c.ridge);
  c.inv_eps = j.value("inv_eps", c.inv_eps);
  c.inv_every_k_steps = j.value("inv_every_k_steps", c.inv_every_k_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.regulate_in_training = j.value("regulate_in_training", c.regulate_in_training);
  return c;
}

// wrong (X) and correct (y) character ids, unpadded and of equal length.
struct ParallelPair {
  std::vector<int> wrong;
  std::vector<int> correct;

  std::vector<std::size_t> error_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < wrong.size(); ++i)
      if (wrong[i] != correct[i]) out.push_back(i);
    return out;
  }
  bool operator==(const ParallelPair&) const = default;
};

// Replaces round(rate * len) distinct positions with uniformly drawn regular
// ids (never PAD or UNK) different from the original character.
inline ParallelPair corrupt(const std::vector<int>& sentence, double rate, int vocab_size, std::mt19937_64& rng) {
  if (!(rate > 0.0 && rate < 1.0)) throw ArgumentError("corrupt: rate must be in (0, 1)");
  ParallelPair pair{sentence, sentence};
  const auto n = static_cast<std::size_t>(std::lround(rate * static_cast<double>(sentence.size())));
  if (n == 0) return pair;
  constexpr int first_regular = Vocabulary::kUnk + 1;
  if (vocab_size - first_regular < 2) throw ArgumentError("corrupt: vocabulary needs at least two regular characters");
  std::vector<std::size_t> positions(sentence.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  std::shuffle(positions.begin(), positions.end(), rng);
  // one draw from vocab_size - first_regular - 1 alternatives, skipping the original
  std::uniform_int_distribution<int> pick(first_regular, vocab_size - 2);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t p = positions[k];
    int r = pick(rng);
    if (r >= sentence[p]) ++r;
    pair.wrong[p] = r;
  }
  return pair;
}

// Batch mean of per-sentence negative log-likelihood sums over non-PAD positions.
inline double correction_loss(const std::vector<Matrix>& logits, const std::vector<std::vector<int>>& targets,
                              const std::vector<std::vector<char>>& pad_mask) {
  if (logits.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    ad::Tape t;
    total += ad::cross_entropy_sum(t.constant(logits[b]), targets[b], pad_mask[b]).scalar();
  }
  return total / static_cast<double>(logits.size());
}

// Decoupled-weight-decay Adam.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, double lr, const std::vector<char>& decay) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(Matrix::Zero(p.rows(), p.cols()));
        v.push_back(Matrix::Zero(p.rows(), p.cols()));
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].cwiseAbs2();
      if (weight_decay > 0.0 && (decay.empty() || decay[i])) params[i] *= (1.0 - lr * weight_decay);
      params[i].array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

struct StepReport {
  std::uint64_t step = 0;
  double loss = 0.0;        // L
  double correction = 0.0;  // L_C
  double alignment = 0.0;   // L_A
  double translator = 0.0;  // L_F
  bool operator==(const StepReport&) const = default;
};

inline std::string loss_history_csv(const std::vector<StepReport>& history) {
  std::ostringstream out;
  out << "step,L,L_C,L_A,L_F\n";
  for (const auto& r : history)
    out << r.step << ',' << detail::format_double(r.loss) << ',' << detail::format_double(r.correction) << ','
        << detail::format_double(r.alignment) << ',' << detail::format_double(r.translator) << '\n';
  return out.str();
}

// The four losses of one batch, all on a single tape.
struct BatchObjective {
  ad::Var total;        // lambda * L_C + (1 - lambda) * L_A
  ad::Var correction;   // L_C
  ad::Var alignment;    // L_A
  ad::Var translator;   // L_F
};

struct PreparedPair {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<char> mask;
  std::size_t real_len = 0;
};

inline PreparedPair prepare_pair(const ParallelPair& p, int max_seq) {
  if (p.wrong.size() != p.correct.size()) throw DataError("parallel pair lengths differ");
  PreparedPair out;
  out.real_len = std::min<std::size_t>(p.wrong.size(), static_cast<std::size_t>(max_seq));
  out.tokens = pad_to(p.wrong, max_seq);
  out.targets = pad_to(p.correct, max_seq);
  out.mask.assign(static_cast<std::size_t>(max_seq), 0);
  std::fill_n(out.mask.begin(), out.real_len, 1);
  return out;
}

inline BatchObjective build_batch_objective(ad::Tape& tape, const ModelConfig& mcfg, const std::vector<ad::Var>& encoder_params,
                                            const ad::Var& translator, const Matrix& translator_inverse,
                                            const CoocStore& store, std::span<const ParallelPair> batch,
                                            const TrainConfig& cfg, std::mt19937_64* dropout_rng) {
  if (batch.empty()) throw ArgumentError("build_batch_objective: empty batch");
  ad::Var lc, la, lf;
  auto accumulate = [](ad::Var& acc, const ad::Var& x) { acc = acc.valid() ? ad::add(acc, x) : x; };
  ForwardOptions opt;
  opt.dropout_rng = dropout_rng;
  for (const ParallelPair& pair : batch) {
    const PreparedPair p = prepare_pair(pair, mcfg.max_seq);
    const Matrix ms = padded_associative_matrix(store, p.tokens, p.real_len);
    EncoderGraph g = build_encoder_graph(tape, mcfg, encoder_params, p.tokens, p.real_len, opt);
    if (!g.logits.value().allFinite() || !g.final_hidden.value().allFinite())
      throw DataError("non-finite activations in forward pass");
    const ad::Var ma = combined_attention(g.attention);

    ad::Var logits = g.logits;
    if (cfg.regulate_in_training) {
      const RegulatorWeights w = character_weights(ma.value(), ms, p.real_len);
      Regulation reg{w.w, false};
      ForwardOptions ropt = opt;
      ropt.regulation = &reg;
      logits = build_encoder_graph(tape, mcfg, encoder_params, p.tokens, p.real_len, ropt).logits;
    }
    accumulate(lc, ad::cross_entropy_sum(logits, p.targets, p.mask));
    accumulate(la, attention_alignment_loss(ma, alignment_target(translator_inverse, ms, p.real_len), p.real_len));
    const Matrix mt = least_squares_transform(g.embedded.value(), g.final_hidden.value(), cfg.ridge);
    accumulate(lf, translator_loss(translator, mt, ms, p.real_len));
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchObjective obj;
  obj.correction = ad::scale(lc, inv_b);
  obj.alignment = ad::scale(la, inv_b);
  obj.translator = ad::scale(lf, inv_b);
  obj.total = ad::axpby(cfg.lambda, obj.correction, 1.0 - cfg.lambda, obj.alignment);
  return obj;
}

inline std::string describe_batch(std::span<const ParallelPair> batch) {
  std::ostringstream out;
  for (const auto& p : batch) {
    out << "\n  wrong:";
    for (int i : p.wrong) out << ' ' << i;
    out << " | correct:";
    for (int i : p.correct) out << ' ' << i;
  }
  return out.str();
}

class Trainer {
 public:
  Trainer(EncoderState encoder, const CoocStore& store, TrainConfig cfg)
      : encoder_(std::move(encoder)), store_(&store), cfg_(cfg), translator_(encoder_.config.max_seq), rng_(cfg.seed) {
    cfg_.validate();
    if (store.vocab_size() != encoder_.config.vocab_size)
      throw ArgumentError("Trainer: AKN vocabulary size differs from the encoder's");
    encoder_opt_.weight_decay = cfg_.weight_decay;
    translator_opt_.weight_decay = 0.0;
    for (std::size_t i = 0; i < encoder_.params.size(); ++i) decay_.push_back(encoder_.params[i].rows() > 1 ? 1 : 0);
  }

  const EncoderState& encoder() const { return encoder_; }
  EncoderState& encoder() { return encoder_; }
  const TranslatorMatrix& translator() const { return translator_; }
  TranslatorMatrix& translator() { return translator_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<StepReport>& history() const { return history_; }
  std::uint64_t step() const { return step_; }
  int epoch() const { return epoch_; }
  std::mt19937_64& rng() { return rng_; }

  const Matrix& translator_inverse() {
    if (inverse_.size() == 0 || step_ % static_cast<std::uint64_t>(cfg_.inv_every_k_steps) == 0)
      inverse_ = regularized_inverse(translator_.weights, cfg_.inv_eps);
    return inverse_;
  }

  // Gradients of one batch without updating anything.
  struct Gradients {
    std::vector<Matrix> encoder;
    Matrix translator;
    StepReport report;
  };

  Gradients compute_gradients(std::span<const ParallelPair> batch, bool dropout = true) {
    ad::Tape tape;
    const auto params = tape_parameters(tape, encoder_, true);
    const ad::Var mf = tape.variable(translator_.weights);
    const Matrix& inv = translator_inverse();
    const std::string where = " at step " + std::to_string(step_ + 1) + "; offending batch:" + describe_batch(batch);
    BatchObjective obj;
    try {
      obj = build_batch_objective(tape, encoder_.config, params, mf, inv, *store_, batch, cfg_, dropout ? &rng_ : nullptr);
    } catch (const DataError& e) {
      throw DataError(e.what() + where);
    }
    Gradients g;
    g.report = {step_ + 1, obj.total.scalar(), obj.correction.scalar(), obj.alignment.scalar(), obj.translator.scalar()};
    if (!std::isfinite(g.report.loss) || !std::isfinite(g.report.translator)) throw DataError("non-finite loss" + where);
    tape.backward(obj.total);
    for (const auto& p : params) g.encoder.push_back(p.grad());
    tape.backward(obj.translator);
    g.translator = mf.grad();
    return g;
  }

  StepReport train_step(std::span<const ParallelPair> batch) {
    Gradients g = compute_gradients(batch);
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& m : g.encoder) sq += m.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip)
        for (auto& m : g.encoder) m *= cfg_.grad_clip / norm;
    }
    double scale = 1.0;
    if (cfg_.warmup_steps > 0 && step_ < static_cast<std::uint64_t>(cfg_.warmup_steps))
      scale = static_cast<double>(step_ + 1) / static_cast<double>(cfg_.warmup_steps);
    encoder_opt_.step(encoder_.params, g.encoder, cfg_.lr_encoder * scale, decay_);
    std::vector<Matrix> mf{std::move(translator_.weights)};
    translator_opt_.step(mf, {g.translator}, cfg_.lr_translator, {});
    translator_.weights = std::move(mf.front());
    ++step_;
    history_.push_back(g.report);
    return g.report;
  }

  // One pass over clean sentences, corrupted afresh each epoch.
  std::vector<StepReport> pretrain_epoch(const std::vector<std::vector<int>>& corpus) {
    if (corpus.empty()) throw ArgumentError("pretrain: empty corpus");
    std::vector<std::size_t> order = shuffled(corpus.size());
    std::vector<StepReport> reports;
    std::vector<ParallelPair> batch;
    for (std::size_t k = 0; k < order.size(); ++k) {
      batch.push_back(corrupt(corpus[order[k]], cfg_.corruption_rate, encoder_.config.vocab_size, rng_));
      if (static_cast<int>(batch.size()) == cfg_.batch_size || k + 1 == order.size()) {
        reports.push_back(train_step(batch));
        batch.clear();
      }
    }
    ++epoch_;
    return reports;
  }

  std::vector<StepReport> finetune_epoch(const std::vector<ParallelPair>& pairs) {
    if (pairs.empty()) throw ArgumentError("finetune: empty parallel corpus");
    std::vector<std::size_t> order = shuffled(pairs.size());
    std::vector<StepReport> reports;
    std::vector<ParallelPair> batch;
    for (std::size_t k = 0; k < order.size(); ++k) {
      batch.push_back(pairs[order[k]]);
      if (static_cast<int>(batch.size()) == cfg_.batch_size || k + 1 == order.size()) {
        reports.push_back(train_step(batch));
        batch.clear();
      }
    }
    ++epoch_;
    return reports;
  }

  // Everything needed to resume bit-identically: encoder.ckpt, translator.ckpt,
  // trainer.ckpt (optimizer moments, RNG, counters) and loss_history.csv.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_encoder(encoder_, (dir / "encoder.ckpt").string());
    save_translator(translator_, (dir / "translator.ckpt").string());
    std::ostringstream rng_text;
    rng_text << rng_;
    TensorBundle b{"trainer", 1, {}, {}};
    b.meta = {{"step", step_},
              {"epoch", epoch_},
              {"rng", rng_text.str()},
              {"train_config", to_json(cfg_)},
              {"encoder_adam_t", encoder_opt_.t},
              {"translator_adam_t", translator_opt_.t}};
    for (std::size_t i = 0; i < encoder_opt_.m.size(); ++i) {
      b.tensors.emplace_back("enc.m." + std::to_string(i), encoder_opt_.m[i]);
      b.tensors.emplace_back("enc.v." + std::to_string(i), encoder_opt_.v[i]);
    }
    if (!translator_opt_.m.empty()) {
      b.tensors.emplace_back("tr.m", translator_opt_.m[0]);
      b.tensors.emplace_back("tr.v", translator_opt_.v[0]);
    }
    if (inverse_.size() != 0) b.tensors.emplace_back("tr.inverse", inverse_);
    write_bundle((dir / "trainer.ckpt").string(), b);
    std::ofstream((dir / "loss_history.csv").string()) << loss_history_csv(history_);
  }

  // Replaces the hyperparameters while keeping weights, optimizer moments and RNG.
  void set_config(const TrainConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    encoder_opt_.weight_decay = cfg_.weight_decay;
  }

  // Restores a trainer saved by save(), including its loss history.
  static Trainer load(const std::filesystem::path& dir, const CoocStore& store) {
    TensorBundle b = read_bundle((dir / "trainer.ckpt").string(), "trainer", 1);
    Trainer t(load_encoder((dir / "encoder.ckpt").string()), store, train_config_from_json(b.meta.at("train_config")));
    t.translator_ = load_translator((dir / "translator.ckpt").string());
    t.step_ = b.meta.at("step").get<std::uint64_t>();
    t.epoch_ = b.meta.at("epoch").get<int>();
    std::istringstream(b.meta.at("rng").get<std::string>()) >> t.rng_;
    t.encoder_opt_.t = b.meta.at("encoder_adam_t").get<std::uint64_t>();
    t.translator_opt_.t = b.meta.at("translator_adam_t").get<std::uint64_t>();
    for (const auto& [name, m] : b.tensors) {
      if (name.rfind("enc.m.", 0) == 0) t.encoder_opt_.m.push_back(m);
      else if (name.rfind("enc.v.", 0) == 0) t.encoder_opt_.v.push_back(m);
      else if (name == "tr.m") t.translator_opt_.m.push_back(m);
      else if (name == "tr.v") t.translator_opt_.v.push_back(m);
      else if (name == "tr.inverse") t.inverse_ = m;
    }
    std::ifstream hist(dir / "loss_history.csv");
    std::string line;
    std::getline(hist, line);
    while (std::getline(hist, line)) {
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream row(line);
      StepReport r;
      if (row >> r.step >> r.loss >> r.correction >> r.alignment >> r.translator) t.history_.push_back(r);
    }
    return t;
  }

 private:
  std::vector<std::size_t> shuffled(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    return order;
  }

  EncoderState encoder_;
  const CoocStore* store_;
  TrainConfig cfg_;
  TranslatorMatrix translator_;
  Matrix inverse_;
  AdamW encoder_opt_;
  AdamW translator_opt_;
  std::vector<char> decay_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
  int epoch_ = 0;
  std::vector<StepReport> history_;
};

// Runs `epochs` epochs of a stage, saving <out>/<stage>-epoch-<n>/ after each
// one and appending to <out>/loss_history.csv.
template <class EpochFn>
void run_stage(Trainer& trainer, const std::string& stage, int epochs, const std::filesystem::path& out_dir, EpochFn&& epoch_fn) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  for (int e = 0; e < epochs; ++e) {
    epoch_fn();
    if (!out_dir.empty()) {
      trainer.save(out_dir / (stage + "-epoch-" + std::to_string(trainer.epoch())));
      std::ofstream(out_dir / "loss_history.csv") << loss_history_csv(trainer.history());
    }
  }
}

inline void pretrain(Trainer& trainer, const std::vector<std::vector<int>>& corpus, const std::filesystem::path& out_dir = {}) {
  if (corpus.empty()) throw ArgumentError("pretrain: empty corpus");
  run_stage(trainer, "pretrain", trainer.config().epochs, out_dir, [&] { trainer.pretrain_epoch(corpus); });
}

inline void finetune(Trainer& trainer, const std::vector<ParallelPair>& pairs, const std::filesystem::path& out_dir = {}) {
  if (pairs.empty()) throw ArgumentError("finetune: empty parallel corpus");
  run_stage(trainer, "finetune", trainer.config().epochs, out_dir, [&] { trainer.finetune_epoch(pairs); });
}

}  // namespace axbert
