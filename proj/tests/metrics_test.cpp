#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "axbert/metrics.hpp"

namespace axbert {
namespace {

// exact hit, partial positions, false flag
std::vector<EvalRecord> sentence_case() {
  return {
      {{2, 9, 4}, {2, 3, 4}, {2, 3, 4}},
      {{5, 9, 9, 6}, {5, 6, 7, 6}, {5, 6, 9, 6}},
      {{2, 3}, {2, 3}, {2, 4}},
  };
}

// two errors: one fixed, one mangled, plus an overcorrection
std::vector<EvalRecord> character_case() { return {{{2, 9, 9, 5}, {2, 3, 4, 5}, {2, 3, 7, 6}}}; }

void expect_consistent(const PRF& p) {
  for (double v : {p.precision, p.recall, p.f1}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  if (p.precision + p.recall > 0.0)
    EXPECT_DOUBLE_EQ(p.f1, 2.0 * p.precision * p.recall / (p.precision + p.recall));
  else
    EXPECT_EQ(p.f1, 0.0);
}

TEST(SentenceMetrics, HandCase) {
  const LevelMetrics m = sentence_metrics(sentence_case());
  EXPECT_DOUBLE_EQ(m.detection.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.detection.recall, 0.5);
  EXPECT_DOUBLE_EQ(m.correction.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.correction.recall, 0.5);
  EXPECT_EQ(m.detection.tp, 1u);
  EXPECT_EQ(m.detection.fp, 2u);
  EXPECT_EQ(m.detection.fn, 1u);
}

TEST(SentenceMetrics, PerfectAndIdentity) {
  std::vector<EvalRecord> perfect = sentence_case();
  for (auto& r : perfect) r.predicted = r.gold;
  perfect.pop_back();
  const LevelMetrics p = sentence_metrics(perfect);
  EXPECT_EQ(p.detection.f1, 1.0);
  EXPECT_EQ(p.correction.f1, 1.0);

  std::vector<EvalRecord> identity = sentence_case();
  for (auto& r : identity) r.predicted = r.input;
  const LevelMetrics z = sentence_metrics(identity);
  EXPECT_EQ(z.detection.precision, 0.0);
  EXPECT_EQ(z.detection.recall, 0.0);
  EXPECT_EQ(z.detection.f1, 0.0);
}

TEST(CharacterMetrics, HandCase) {
  const LevelMetrics m = character_metrics(character_case());
  EXPECT_DOUBLE_EQ(m.detection.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.detection.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.correction.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.correction.recall, 0.5);
}

TEST(CharacterMetrics, PerfectAndOvercorrection) {
  std::vector<EvalRecord> r = character_case();
  r[0].predicted = r[0].gold;
  const LevelMetrics p = character_metrics(r);
  EXPECT_EQ(p.detection.precision, 1.0);
  EXPECT_EQ(p.correction.recall, 1.0);
  r[0].predicted[0] = 8;
  EXPECT_EQ(character_metrics(r).detection.fp, 1u);
}

TEST(Metrics, LengthMismatchNamesRecord) {
  std::vector<EvalRecord> r = sentence_case();
  r[1].predicted.pop_back();
  try {
    evaluate(r);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos);
  }
  EXPECT_THROW(evaluate({}), DataError);
}

TEST(Metrics, BoundsF1IdentityAndPermutationInvariance) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> id(2, 6), len(1, 8), coin(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalRecord> recs(1 + rng() % 12);
    for (auto& r : recs) {
      const int n = len(rng);
      for (int i = 0; i < n; ++i) {
        const int g = id(rng);
        r.gold.push_back(g);
        r.input.push_back(coin(rng) == 0 ? id(rng) : g);
        r.predicted.push_back(coin(rng) == 0 ? id(rng) : (coin(rng) == 0 ? r.input.back() : g));
      }
    }
    const MetricsReport m = evaluate(recs);
    for (const LevelMetrics* l : {&m.sentence, &m.character}) {
      expect_consistent(l->detection);
      expect_consistent(l->correction);
    }
    std::shuffle(recs.begin(), recs.end(), rng);
    EXPECT_EQ(evaluate(recs), m);
  }
}

TEST(Metrics, JsonAndTextReports) {
  const MetricsReport m = evaluate(sentence_case());
  const nlohmann::json j = to_json(m);
  EXPECT_EQ(j["records"], 3);
  EXPECT_DOUBLE_EQ(j["sentence"]["detection"]["precision"].get<double>(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(j["sentence"]["detection"]["recall"].get<double>(), 0.5);
  const std::string text = to_text(m);
  EXPECT_NE(text.find("sentence   detection   0.3333"), std::string::npos) << text;
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

}  // namespace
}  // namespace axbert
