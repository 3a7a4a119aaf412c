#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "support/akn_oracle.hpp"

namespace axbert {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args, const std::string& stdin_text = "") {
  args.insert(args.begin(), "axbert");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("axbert_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string write(const std::string& name, const std::string& text) {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

// every layer is a pass-through and the head reads the token back out
void write_identity_model(const fs::path& dir, const std::string& corpus) {
  std::vector<std::string> lines;
  std::istringstream in(corpus);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  const Vocabulary vocab = Vocabulary::from_corpus(lines);
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.layers = 2;
  c.heads = 2;
  c.hidden = 2 * ((vocab.size() + 1) / 2);
  c.max_seq = 8;
  c.dropout = 0.0;
  EncoderState s = EncoderState::initialize(c);
  using namespace param;
  s.params[kTokEmb].setZero();
  for (int i = 0; i < c.vocab_size; ++i) s.params[kTokEmb](i, i) = 10.0;
  s.params[kPosEmb].setZero();
  for (int l = 0; l < c.layers; ++l)
    for (Layer k : {kWo, kBo, kW2, kB2}) s.params[layer(l, k)].setZero();
  s.params[tail(c.layers, kOutW)] = Matrix::Identity(c.hidden, c.vocab_size);
  s.params[tail(c.layers, kOutB)].setZero();
  CoocStore store(vocab.size());
  for (const auto& l : lines) store.ingest(vocab.encode(l));
  fs::create_directories(dir);
  save_encoder(s, (dir / "encoder.ckpt").string());
  vocab.save((dir / "vocab.txt").string());
  store.save((dir / "store.akn").string());
}

TEST_F(Cli, EvalOnHandCaseRecords) {
  const std::string recs = write("recs.tsv", "axc\tabc\tabc\ndxxe\tdefe\tdexe\nab\tab\tac\n");
  const CliResult r = run({"eval", "--records", recs});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["records"], 3);
  EXPECT_DOUBLE_EQ(j["sentence"]["detection"]["precision"].get<double>(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(j["sentence"]["detection"]["recall"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["sentence"]["correction"]["precision"].get<double>(), 1.0 / 3.0);

  const CliResult text = run({"eval", "--records", recs, "--format", "text"});
  EXPECT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("sentence   detection   0.3333"), std::string::npos) << text.out;
}

TEST_F(Cli, EvalLengthMismatchIsDataError) {
  const CliResult r = run({"eval", "--records", write("recs.tsv", "ab\tab\tab\nabc\tabc\tab\n")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("record 2"), std::string::npos) << r.err;
}

TEST_F(Cli, AknBuildThenInspectMatchesBruteForce) {
  const CliResult small = run({"akn", "build", write("c.txt", "abc\nab\n"), "--store", path("s.akn"), "--vocab", path("v.txt")});
  ASSERT_EQ(small.code, 0) << small.err;
  CliResult r = run({"akn", "inspect", "--store", path("s.akn"), "--vocab", path("v.txt"), "a", "b"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_DOUBLE_EQ(std::stod(r.out), 1.95);

  std::mt19937_64 rng(5);
  const auto sentences = testing::random_sentences(40, 6, 9, rng);
  std::string corpus;
  for (const auto& s : sentences) {
    for (int c : s) corpus += static_cast<char>('a' + c);
    corpus += '\n';
  }
  fs::remove(path("v.txt"));
  ASSERT_EQ(run({"akn", "build", write("c.txt", corpus), "--store", path("s.akn"), "--vocab", path("v.txt")}).code, 0);
  // the CLI skips blank lines, so the oracle sees only non-empty sentences
  testing::DenseCooc dense(6, kDefaultShrinkRate);
  for (const auto& s : sentences)
    if (!s.empty()) dense.ingest(s);
  for (int a = 0; a < 6; ++a)
    for (int b = a; b < 6; ++b) {
      r = run({"akn", "inspect", "--store", path("s.akn"), "--vocab", path("v.txt"), std::string(1, 'a' + a),
               std::string(1, 'a' + b)});
      ASSERT_EQ(r.code, 0) << r.err;
      EXPECT_NEAR(std::stod(r.out), dense.scores(a, b), 1e-9) << a << ' ' << b;
    }
}

TEST_F(Cli, AknAdjustScalesThePair) {
  ASSERT_EQ(run({"akn", "build", write("c.txt", "abc\nab\n"), "--store", path("s.akn"), "--vocab", path("v.txt")}).code, 0);
  const CliResult r = run({"akn", "adjust", "--store", path("s.akn"), "--vocab", path("v.txt"), "--out", path("t.akn"), "a", "b", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_DOUBLE_EQ(std::stod(r.out), 3.9);
  const CliResult orig = run({"akn", "inspect", "--store", path("s.akn"), "--vocab", path("v.txt"), "a", "b"});
  EXPECT_DOUBLE_EQ(std::stod(orig.out), 1.95);
  EXPECT_EQ(run({"akn", "inspect", "--store", path("s.akn"), "--vocab", path("v.txt"), "a", "z"}).code, 1);
}

TEST_F(Cli, CorrectOnIdentityModelEchoesInput) {
  const std::string corpus = "abcde\nbcdea\ncab\n";
  write_identity_model(dir / "m", corpus);
  const std::string input = "abcde\nedcba\nab\nabcdeabcde\nqab\n";
  for (const std::vector<std::string>& extra : {std::vector<std::string>{}, std::vector<std::string>{"--no-regulate"}}) {
    std::vector<std::string> args{"correct", "--model", path("m")};
    args.insert(args.end(), extra.begin(), extra.end());
    const CliResult r = run(args, input);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, input);
  }
  const CliResult f = run({"correct", "--model", path("m"), write("in.txt", "cab\n")});
  EXPECT_EQ(f.out, "cab\n");
}

TEST_F(Cli, DumpCaseWritesMatricesAndGrids) {
  write_identity_model(dir / "m", "abcde\nbcdea\n");
  const CliResult r = run({"dump-case", "--model", path("m"), "abc", "--grids", path("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["chars"], (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(j["associative"].size(), 3u);
  EXPECT_EQ(j["attention_after"].size(), 2u);
  EXPECT_EQ(j["corrected"], "abc");
  for (const char* f : {"associative.txt", "combined_attention.txt", "attention_before_0.txt", "attention_after_1.txt"})
    EXPECT_TRUE(fs::exists(dir / "g" / f)) << f;
}

TEST_F(Cli, AnalyzeOnIdentityModel) {
  write_identity_model(dir / "m", "abcde\nbcdea\ncab\n");
  const CliResult sim = run({"analyze", "sim", "--model", path("m"), write("c.txt", "abcde\ncab\n")});
  ASSERT_EQ(sim.code, 0) << sim.err;
  EXPECT_EQ(std::count(sim.out.begin(), sim.out.end(), '\n'), 3);
  // the identity model never fixes anything
  const CliResult ctl = run({"analyze", "control", "--model", path("m"), write("p.tsv", "abd\tabc\n")});
  ASSERT_EQ(ctl.code, 0) << ctl.err;
  EXPECT_EQ(nlohmann::json::parse(ctl.out)["total_errors"], 0);
  EXPECT_NE(ctl.err.find("corrects none"), std::string::npos);
  EXPECT_EQ(run({"analyze", "control", "--model", path("m"), path("p.tsv"), "--ratios", "1,x"}).code, 2);
}

TEST_F(Cli, TrainingIsSeededAndResumable) {
  std::string corpus, pairs;
  for (const char* s : {"abcdef", "bcdefa", "cdefab", "abcabc", "defdef", "fedcba", "acebdf", "bdface"}) corpus += std::string(s) + '\n';
  pairs = "abcdff\tabcdef\nbcdeaa\tbcdefa\n";
  const std::string cfg = write("cfg.json", R"({"layers": 1, "heads": 2, "hidden": 8, "max_seq": 6, "dropout": 0.1,
                                               "batch_size": 4, "epochs": 2, "lr_encoder": 1e-3})");
  write("c.txt", corpus);
  for (const char* out : {"a", "b"}) {
    const CliResult r = run({"--config", cfg, "--seed", "9", "train", "pretrain", path("c.txt"), "--out", path(out)});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("step 4 "), std::string::npos) << r.out;
  }
  for (const char* f : {"encoder.ckpt", "translator.ckpt", "trainer.ckpt", "vocab.txt", "store.akn", "loss_history.csv"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "a" / "pretrain-epoch-2" / "encoder.ckpt"));
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes(dir / "a" / "encoder.ckpt"), bytes(dir / "b" / "encoder.ckpt"));

  const CliResult c = run({"--seed", "10", "train", "pretrain", path("c.txt"), "--out", path("c"), "--config", cfg});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(bytes(dir / "a" / "encoder.ckpt"), bytes(dir / "c" / "encoder.ckpt"));

  const CliResult ft = run({"train", "finetune", write("p.tsv", pairs), "--from", path("a"), "--out", path("f"), "--epochs", "1"});
  ASSERT_EQ(ft.code, 0) << ft.err;
  EXPECT_TRUE(fs::exists(dir / "f" / "finetune-epoch-3" / "encoder.ckpt"));
  EXPECT_EQ(run({"correct", "--model", path("f")}, "abcdef\n").code, 0);
}

TEST_F(Cli, UsageErrors) {
  CliResult r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Subcommands"), std::string::npos);
  r = run({"eval", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"akn", "inspect", "a"}).code, 2);
  EXPECT_EQ(run({"eval", "--records", "x", "--model", "y", "--pairs", "z"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"--config", write("cfg.json", R"({"layerz": 2})"), "eval", "--records", path("cfg.json")}).code, 2);
}

TEST_F(Cli, DataErrors) {
  EXPECT_EQ(run({"eval", "--records", path("missing.tsv")}).code, 1);
  write_identity_model(dir / "m", "abc\n");
  const CliResult r = run({"eval", "--model", path("m"), "--pairs", write("p.tsv", "abc\tabc\nab\tabc\n")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_EQ(run({"--config", write("bad.json", "{"), "eval", "--records", path("p.tsv")}).code, 1);
}

}  // namespace
}  // namespace axbert
