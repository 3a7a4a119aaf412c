#pragma once

// Command-line front end. A model directory holds encoder.ckpt,
// translator.ckpt, trainer.ckpt, loss_history.csv, vocab.txt and store.akn.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "axbert/analysis.hpp"
#include "axbert/checkpoint.hpp"
#include "axbert/vocab.hpp"

namespace axbert::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(rstrip_newline(line));
  return lines;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_lines(in);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (std::size_t k; (k = line.find('\t', start)) != std::string::npos; start = k + 1) cols.push_back(line.substr(start, k - start));
  cols.push_back(line.substr(start));
  return cols;
}

// Non-empty lines of a plain-text corpus.
inline std::vector<std::string> read_corpus(const std::string& path) {
  std::vector<std::string> out;
  for (auto& l : read_lines(path))
    if (!l.empty()) out.push_back(std::move(l));
  return out;
}

struct TextPair {
  std::string wrong, correct;
};

// wrong<TAB>correct per line, equal character counts.
inline std::vector<TextPair> read_pairs(const std::string& path) {
  std::vector<TextPair> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cols = split_tabs(lines[i]);
    if (cols.size() != 2) throw ParseError(path + ": expected wrong<TAB>correct", i + 1);
    if (utf8_chars(cols[0]).size() != utf8_chars(cols[1]).size())
      throw ParseError(path + ": wrong and correct sentences differ in character count", i + 1);
    out.push_back({cols[0], cols[1]});
  }
  return out;
}

inline std::vector<ParallelPair> encode_pairs(const Vocabulary& v, const std::vector<TextPair>& pairs) {
  std::vector<ParallelPair> out;
  for (const auto& p : pairs) out.push_back({v.encode(p.wrong), v.encode(p.correct)});
  return out;
}

// Flat JSON object whose keys are ModelConfig and TrainConfig fields.
struct Settings {
  ModelConfig model;
  TrainConfig train;
  nlohmann::json raw = nlohmann::json::object();
};

inline Settings load_settings(const std::string& path, const std::optional<std::uint64_t>& seed) {
  Settings s;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    try {
      s.raw = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
    if (!s.raw.is_object()) throw DataError(path + ": config must be a JSON object");
    std::set<std::string> known;
    const nlohmann::json defaults[] = {to_json(ModelConfig{}), to_json(TrainConfig{})};
    for (const auto& d : defaults)
      for (const auto& [k, _] : d.items()) known.insert(k);
    for (const auto& [k, _] : s.raw.items())
      if (!known.count(k)) throw ArgumentError(path + ": unknown config key '" + k + "'");
    try {
      s.model = model_config_from_json(s.raw);
      s.train = train_config_from_json(s.raw);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  if (seed) {
    s.model.seed = *seed;
    s.train.seed = *seed;
  }
  return s;
}

struct Model {
  Vocabulary vocab;
  CoocStore store;
  EncoderState encoder;
};

inline Model load_model(const fs::path& dir) {
  Model m;
  m.vocab = Vocabulary::load((dir / "vocab.txt").string());
  m.store = CoocStore::load((dir / "store.akn").string());
  m.encoder = load_encoder((dir / "encoder.ckpt").string());
  if (m.encoder.config.vocab_size != m.vocab.size() || m.store.vocab_size() != m.vocab.size())
    throw DataError(dir.string() + ": vocabulary, store and encoder sizes disagree");
  return m;
}

// Characters beyond max_seq and characters the model maps to PAD/UNK are kept.
inline std::string correct_text(const Model& m, const std::string& text, const CorrectOptions& opt) {
  const auto chars = utf8_chars(text);
  const auto ids = m.vocab.encode(text);
  const auto pred = correct_sentence(m.encoder, m.store, ids, opt);
  std::string out;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    if (i < pred.size() && pred[i] != ids[i] && pred[i] != Vocabulary::kPad && pred[i] != Vocabulary::kUnk)
      out += m.vocab.at(pred[i]);
    else
      out += chars[i];
  }
  return out;
}

inline std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double r = 0;
    try {
      r = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(r > 0.0)) throw ArgumentError("bad ratio '" + item + "'");
    out.push_back(r);
  }
  if (out.empty()) throw ArgumentError("no ratios given");
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline int run_cli(int argc, const char* const* argv, std::istream& in = std::cin, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Associative-knowledge regulated spelling correction"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON file with ModelConfig/TrainConfig keys");
  app.add_option("--seed", seed, "overrides every seed");

  // akn
  auto* akn = app.add_subcommand("akn", "associative knowledge network");
  akn->require_subcommand(1);
  std::string akn_corpus, akn_store, akn_vocab, akn_out, ch_a, ch_b;
  double shrink = kDefaultShrinkRate, ratio = 1.0;
  auto* akn_build = akn->add_subcommand("build", "build a store from a plain-text corpus");
  akn_build->add_option("corpus", akn_corpus)->required();
  akn_build->add_option("--store", akn_store, "output store")->required();
  akn_build->add_option("--vocab", akn_vocab, "vocabulary (read if present, else written)")->required();
  akn_build->add_option("--shrink-rate", shrink)->capture_default_str();
  auto* akn_inspect = akn->add_subcommand("inspect", "effective score of a character pair");
  akn_inspect->add_option("--store", akn_store)->required();
  akn_inspect->add_option("--vocab", akn_vocab)->required();
  akn_inspect->add_option("a", ch_a)->required();
  akn_inspect->add_option("b", ch_b)->required();
  auto* akn_adjust = akn->add_subcommand("adjust", "scale a pair's score");
  akn_adjust->add_option("--store", akn_store)->required();
  akn_adjust->add_option("--vocab", akn_vocab)->required();
  akn_adjust->add_option("--out", akn_out, "defaults to overwriting --store");
  akn_adjust->add_option("a", ch_a)->required();
  akn_adjust->add_option("b", ch_b)->required();
  akn_adjust->add_option("ratio", ratio)->required();

  // train
  auto* train = app.add_subcommand("train", "pretraining and fine-tuning");
  train->require_subcommand(1);
  std::string train_data, train_out, train_from;
  std::optional<int> train_epochs;
  auto* pre = train->add_subcommand("pretrain", "train on a clean corpus with synthetic errors");
  pre->add_option("corpus", train_data)->required();
  pre->add_option("--out", train_out)->required();
  pre->add_option("--from", train_from, "resume from a model directory");
  pre->add_option("--epochs", train_epochs);
  pre->add_option("--shrink-rate", shrink, "for the store built from the corpus")->capture_default_str();
  auto* fine = train->add_subcommand("finetune", "train on a wrong<TAB>correct corpus");
  fine->add_option("pairs", train_data)->required();
  fine->add_option("--from", train_from, "pretrained model directory")->required();
  fine->add_option("--out", train_out)->required();
  fine->add_option("--epochs", train_epochs);

  // correct
  auto* correct = app.add_subcommand("correct", "correct sentences, one per line");
  std::string model_dir, input_path;
  bool no_regulate = false;
  correct->add_option("--model", model_dir)->required();
  correct->add_option("input", input_path, "defaults to stdin");
  correct->add_flag("--no-regulate", no_regulate);

  // eval
  auto* eval = app.add_subcommand("eval", "detection/correction metrics");
  std::string records_path, pairs_path, format = "json";
  auto* opt_records = eval->add_option("--records", records_path, "input<TAB>gold<TAB>predicted lines");
  auto* opt_model = eval->add_option("--model", model_dir);
  auto* opt_pairs = eval->add_option("--pairs", pairs_path, "wrong<TAB>correct lines");
  opt_records->excludes(opt_model)->excludes(opt_pairs);
  opt_model->needs(opt_pairs);
  opt_pairs->needs(opt_model);
  eval->add_flag("--no-regulate", no_regulate);
  eval->add_option("--format", format)->check(CLI::IsMember({"json", "text"}));

  // analyze
  auto* analyze = app.add_subcommand("analyze", "interpretability analyses");
  analyze->require_subcommand(1);
  std::string ratios_text = "1,2,4,8";
  auto* sim = analyze->add_subcommand("sim", "per-layer attention/association similarity (CSV)");
  sim->add_option("--model", model_dir)->required();
  sim->add_option("corpus", input_path)->required();
  auto* control = analyze->add_subcommand("control", "controllability under adjusted scores (JSON)");
  control->add_option("--model", model_dir)->required();
  control->add_option("pairs", pairs_path)->required();
  control->add_option("--ratios", ratios_text)->capture_default_str();

  // dump-case
  auto* dump = app.add_subcommand("dump-case", "per-sentence matrices (JSON, optional numeric grids)");
  std::string sentence, grids_dir;
  dump->add_option("--model", model_dir)->required();
  dump->add_option("sentence", sentence)->required();
  dump->add_option("--grids", grids_dir, "also write plain grids into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  std::ostream* prev_sink = set_warning_sink(&err);
  struct Restore {
    std::ostream* p;
    ~Restore() { set_warning_sink(p); }
  } restore{prev_sink};

  try {
    const Settings settings = load_settings(config_path, seed);
    const CorrectOptions copt{!no_regulate, false};

    if (*akn_build) {
      const auto corpus = read_corpus(akn_corpus);
      Vocabulary vocab = fs::exists(akn_vocab) ? Vocabulary::load(akn_vocab) : Vocabulary::from_corpus(corpus);
      CoocStore store(vocab.size(), shrink);
      for (const auto& s : corpus) store.ingest(vocab.encode(s));
      store.save(akn_store);
      if (!fs::exists(akn_vocab)) vocab.save(akn_vocab);
      out << "sentences " << corpus.size() << ", pairs " << store.entry_count() << '\n';
    } else if (*akn_inspect || *akn_adjust) {
      const Vocabulary vocab = Vocabulary::load(akn_vocab);
      CoocStore store = CoocStore::load(akn_store);
      const int a = vocab.require(ch_a), b = vocab.require(ch_b);
      if (*akn_adjust) {
        store.adjust_score(a, b, ratio);
        store.save(akn_out.empty() ? akn_store : akn_out);
      }
      out << detail::format_double(store.effective_score(a, b)) << '\n';
    } else if (*pre || *fine) {
      TrainConfig tcfg = settings.train;
      if (train_epochs) tcfg.epochs = *train_epochs;
      const fs::path outdir = train_out;
      std::vector<StepReport> history;
      if (*pre) {
        const auto corpus = read_corpus(train_data);
        if (corpus.empty()) throw DataError(train_data + ": empty corpus");
        if (!train_from.empty()) {
          Model m = load_model(train_from);
          Trainer tr = Trainer::load(train_from, m.store);
          tr.set_config(tcfg);
          std::vector<std::vector<int>> ids;
          for (const auto& s : corpus) ids.push_back(m.vocab.encode(s));
          pretrain(tr, ids, outdir);
          tr.save(outdir);
          history = tr.history();
          m.vocab.save((outdir / "vocab.txt").string());
          m.store.save((outdir / "store.akn").string());
        } else {
          const Vocabulary vocab = Vocabulary::from_corpus(corpus);
          std::vector<std::vector<int>> ids;
          for (const auto& s : corpus) ids.push_back(vocab.encode(s));
          CoocStore store(vocab.size(), shrink);
          for (const auto& s : ids) store.ingest(s);
          ModelConfig mcfg = settings.model;
          mcfg.vocab_size = vocab.size();
          Trainer tr(EncoderState::initialize(mcfg), store, tcfg);
          pretrain(tr, ids, outdir);
          tr.save(outdir);
          history = tr.history();
          vocab.save((outdir / "vocab.txt").string());
          store.save((outdir / "store.akn").string());
        }
      } else {
        Model m = load_model(train_from);
        const auto pairs = encode_pairs(m.vocab, read_pairs(train_data));
        Trainer tr = Trainer::load(train_from, m.store);
        tr.set_config(tcfg);
        finetune(tr, pairs, outdir);
        tr.save(outdir);
        history = tr.history();
        m.vocab.save((outdir / "vocab.txt").string());
        m.store.save((outdir / "store.akn").string());
      }
      if (!history.empty())
        out << "step " << history.back().step << " L " << detail::format_double(history.back().loss) << '\n';
    } else if (*correct) {
      const Model m = load_model(model_dir);
      std::vector<std::string> lines;
      if (input_path.empty())
        lines = read_lines(in);
      else
        lines = read_lines(input_path);
      for (const auto& l : lines) out << correct_text(m, l, copt) << '\n';
    } else if (*eval) {
      std::vector<EvalRecord> records;
      if (!records_path.empty()) {
        // ids are local to this file: characters are interned as they appear
        std::map<std::string, int> intern;
        auto enc = [&](const std::string& s) {
          std::vector<int> ids;
          for (const auto& c : utf8_chars(s)) ids.push_back(intern.emplace(c, static_cast<int>(intern.size())).first->second);
          return ids;
        };
        const auto lines = read_lines(records_path);
        for (std::size_t i = 0; i < lines.size(); ++i) {
          const auto cols = split_tabs(lines[i]);
          if (cols.size() != 3) throw ParseError(records_path + ": expected input<TAB>gold<TAB>predicted", i + 1);
          records.push_back({enc(cols[0]), enc(cols[1]), enc(cols[2])});
        }
      } else if (!model_dir.empty()) {
        const Model m = load_model(model_dir);
        records = run_correction(m.encoder, m.store, encode_pairs(m.vocab, read_pairs(pairs_path)), copt);
      } else {
        throw ArgumentError("eval needs --records or --model with --pairs");
      }
      const MetricsReport report = evaluate(records);
      if (format == "text")
        out << to_text(report);
      else
        out << to_json(report).dump(2) << '\n';
    } else if (*sim) {
      const Model m = load_model(model_dir);
      std::vector<std::vector<int>> ids;
      for (const auto& s : read_corpus(input_path)) ids.push_back(m.vocab.encode(s));
      out << similarity_csv(similarity_analysis(m.encoder, m.store, ids));
    } else if (*control) {
      const Model m = load_model(model_dir);
      const auto ratios = parse_ratios(ratios_text);
      const auto pairs = encode_pairs(m.vocab, read_pairs(pairs_path));
      out << to_json(controllability_analysis(m.encoder, m.store, pairs, ratios, copt)).dump(2) << '\n';
    } else if (*dump) {
      const Model m = load_model(model_dir);
      auto chars = utf8_chars(sentence);
      const auto r = two_pass_correct(m.encoder, m.store, m.vocab.encode(sentence));
      chars.resize(r.diagnostics.real_len);
      nlohmann::json j = diagnostics_json(r.diagnostics, chars);
      j["corrected"] = correct_text(m, sentence, {});
      out << j.dump(2) << '\n';
      if (!grids_dir.empty()) {
        const fs::path g = grids_dir;
        fs::create_directories(g);
        const std::size_t n = r.diagnostics.real_len;
        write_text(g / "associative.txt", grid_text(r.diagnostics.associative, n));
        write_text(g / "combined_attention.txt", grid_text(r.diagnostics.combined, n));
        for (int l = 0; l < r.diagnostics.attention_before.layers; ++l) {
          Matrix before = Matrix::Zero(r.diagnostics.attention_before.seq_len(), r.diagnostics.attention_before.seq_len());
          Matrix after = before;
          for (int h = 0; h < r.diagnostics.attention_before.heads; ++h) {
            before += r.diagnostics.attention_before.at(l, h);
            after += r.diagnostics.attention_after.at(l, h);
          }
          write_text(g / ("attention_before_" + std::to_string(l) + ".txt"), grid_text(before, n));
          write_text(g / ("attention_after_" + std::to_string(l) + ".txt"), grid_text(after, n));
        }
      }
    }
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace axbert::cli
