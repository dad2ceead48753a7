#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tsa/metrics.hpp"

using tsa::SentimentLabel;
constexpr auto Neg = SentimentLabel::Negative;
constexpr auto Neu = SentimentLabel::Neutral;
constexpr auto Pos = SentimentLabel::Positive;

namespace {

tsa::ScoredInstance scored(std::string id, SentimentLabel gold, SentimentLabel pred, double confidence) {
  tsa::PredictionDistribution d;
  d.argmax = pred;
  d.confidence = confidence;
  d.masses[tsa::index_of(pred)] = confidence;
  return {std::move(id), gold, d};
}

}  // namespace

TEST(MacroF1, Perfect) {
  const std::vector<tsa::LabelPair> p{{Pos, Pos}, {Neu, Neu}, {Neg, Neg}};
  EXPECT_EQ(tsa::macro_f1(p), 1.0);
}

TEST(MacroF1, HandComputedMatrix) {
  // Positive: tp 1 -> 1. Neutral: tp 1 fp 1 fn 1 -> 1/2. Negative: tp 0 -> 0.
  const std::vector<tsa::LabelPair> p{{Pos, Pos}, {Neg, Neu}, {Neu, Neu}, {Neu, Neg}};
  EXPECT_DOUBLE_EQ(tsa::macro_f1(p), 0.5);
}

TEST(MacroF1, UniformNeutralOnBalancedSet) {
  std::vector<tsa::LabelPair> p;
  for (SentimentLabel g : tsa::kAllLabels) {
    for (int i = 0; i < 4; ++i) p.push_back({g, Neu});
  }
  // F1(neutral) = 2*4 / (2*4 + 8 + 0) = 1/2, the others 0.
  EXPECT_DOUBLE_EQ(tsa::macro_f1(p), 0.5 / 3.0);
}

TEST(MacroF1, SkipsClassesAbsentFromGold) {
  const std::vector<tsa::LabelPair> p{{Pos, Pos}, {Pos, Neg}};
  // Only positive counts: tp 1 fn 1 -> 2/3.
  EXPECT_DOUBLE_EQ(tsa::macro_f1(p), 2.0 / 3.0);
  EXPECT_THROW(tsa::macro_f1(std::vector<tsa::LabelPair>{}), tsa::MetricError);
}

TEST(MacroF1, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> label(0, 2);
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t n = 1 + trial % 20;
    std::vector<int> g(n), p(n);
    std::vector<tsa::LabelPair> pairs, relabeled;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = label(rng);
      p[i] = label(rng);
      pairs.push_back({tsa::label_at(g[i]), tsa::label_at(p[i])});
      relabeled.push_back({tsa::label_at((g[i] + 1) % 3), tsa::label_at((p[i] + 1) % 3)});
    }
    ASSERT_NEAR(tsa::macro_f1(pairs), oracle::macro_f1(g, p), 1e-12);
    ASSERT_NEAR(tsa::macro_f1(pairs), tsa::macro_f1(relabeled), 1e-12);
  }
}

TEST(QuantileBins, OnePerBin) {
  std::vector<std::string> ids;
  std::vector<tsa::BinItem> items;
  for (int i = 0; i < 10; ++i) ids.push_back("i" + std::to_string(i));
  for (int i = 0; i < 10; ++i) items.push_back({0.05 + 0.1 * (9 - i), ids[i]});
  const auto bins = tsa::quantile_bins(items, 10);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(bins[i], static_cast<std::size_t>(9 - i));
}

TEST(QuantileBins, TwelveIntoTen) {
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back(std::string(1, static_cast<char>('a' + i)));
  std::vector<tsa::BinItem> items;
  for (int i = 0; i < 12; ++i) items.push_back({i / 12.0, ids[i]});
  const auto bins = tsa::quantile_bins(items, 10);
  // rank r -> floor(10 r / 12)
  const std::vector<std::size_t> expected{0, 0, 1, 2, 3, 4, 5, 5, 6, 7, 8, 9};
  EXPECT_EQ(bins, expected);
}

TEST(QuantileBins, EqualConfidencesSplitById) {
  const std::string a = "a", b = "b", c = "c", d = "d";
  const std::vector<tsa::BinItem> items{{0.5, d}, {0.5, b}, {0.5, a}, {0.5, c}};
  const auto bins = tsa::quantile_bins(items, 2);
  EXPECT_EQ(bins, (std::vector<std::size_t>{1, 0, 0, 1}));
  EXPECT_THROW(tsa::quantile_bins(items, 5), tsa::MetricError);
}

TEST(Ece, PerfectCalibration) {
  std::vector<tsa::ScoredInstance> s;
  for (int i = 0; i < 20; ++i) s.push_back(scored("x" + std::to_string(i), Pos, Pos, 1.0));
  EXPECT_EQ(tsa::ece(s, 10), 0.0);
  EXPECT_EQ(tsa::calibration_accuracy(tsa::ece(s, 10)), 1.0);
}

TEST(Ece, SingleBinHalfCorrect) {
  std::vector<tsa::ScoredInstance> s;
  for (int i = 0; i < 10; ++i) s.push_back(scored("x" + std::to_string(i), i % 2 ? Pos : Neg, Pos, 1.0));
  EXPECT_DOUBLE_EQ(tsa::ece(s, 1), 0.5);
}

TEST(Ece, MatchesOracle) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> label(0, 2);
  std::uniform_int_distribution<int> grid(1, 6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 10 + trial % 11;
    std::vector<tsa::ScoredInstance> s;
    std::vector<oracle::Item> o;
    for (std::size_t i = 0; i < n; ++i) {
      const double conf = grid(rng) / 6.0;
      const auto g = tsa::label_at(label(rng)), p = tsa::label_at(label(rng));
      s.push_back(scored("id" + std::to_string(i), g, p, conf));
      o.push_back({"id" + std::to_string(i), conf, g == p});
    }
    for (std::size_t m : {1u, 3u, 10u}) ASSERT_NEAR(tsa::ece(s, m), oracle::ece(o, m), 1e-12);
  }
}

TEST(CalibrationBins, PartitionTheScoredSet) {
  std::vector<tsa::ScoredInstance> s;
  for (int i = 0; i < 23; ++i) s.push_back(scored("x" + std::to_string(i), Pos, i % 3 ? Pos : Neg, (i % 7) / 6.0));
  const auto bins = tsa::calibration_bins(s, 10);
  ASSERT_EQ(bins.size(), 10u);
  std::size_t total = 0;
  for (const auto& b : bins) {
    EXPECT_GE(b.members.size(), 2u);
    EXPECT_LE(b.members.size(), 3u);
    total += b.members.size();
  }
  EXPECT_EQ(total, 23u);
}

TEST(MajorityVote, Examples) {
  EXPECT_EQ(tsa::majority_vote(std::vector<SentimentLabel>(6, Neg)), (tsa::MajorityVote{Neg, 6, false}));
  EXPECT_EQ(tsa::majority_vote(std::vector<SentimentLabel>{Pos, Pos, Neu, Neu, Neg, Neg}),
            (tsa::MajorityVote{Pos, 2, true}));
  EXPECT_EQ(tsa::majority_vote(std::vector<SentimentLabel>{Neu, Neu, Neu, Neu, Pos, Pos}),
            (tsa::MajorityVote{Neu, 4, false}));
}

TEST(VoteBins, UnanimousAndCorrect) {
  std::vector<tsa::VoteBinInput> in;
  for (int i = 0; i < 5; ++i) {
    in.push_back({std::vector<SentimentLabel>(6, Neg), std::vector<SentimentLabel>(6, Neg), Neg, Neg});
  }
  const auto cells = tsa::vote_bin_f1(in);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0], (tsa::VoteBinCell{6, 6, 1.0, 5}));
}

TEST(VoteBins, TwoCellsAgainstOracle) {
  const std::vector<SentimentLabel> four_pos{Pos, Pos, Pos, Pos, Neu, Neg};
  const std::vector<SentimentLabel> three_neu{Neu, Neu, Neu, Pos, Pos, Neg};
  std::vector<tsa::VoteBinInput> in{
      {four_pos, std::vector<SentimentLabel>(6, Pos), Pos, Pos},
      {four_pos, std::vector<SentimentLabel>(6, Neg), Pos, Neg},
      {three_neu, {Neu, Neu, Pos, Pos, Neg}, Neu, Pos},
      {three_neu, {Neu, Neu, Neu, Pos, Neg}, Neu, Neu},
  };
  const auto cells = tsa::vote_bin_f1(in);
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].annotator_majority, 3u);
  EXPECT_EQ(cells[0].model_majority, 2u);  // five votes, support 5
  EXPECT_DOUBLE_EQ(cells[0].f1, oracle::macro_f1({1}, {2}));
  EXPECT_EQ(cells[1].model_majority, 3u);
  EXPECT_DOUBLE_EQ(cells[1].f1, 1.0);
  EXPECT_EQ(cells[2].annotator_majority, 4u);
  EXPECT_EQ(cells[2].size, 2u);
  EXPECT_DOUBLE_EQ(cells[2].f1, oracle::macro_f1({2, 2}, {2, 0}));
}

TEST(VoteBins, RequiresRawLabels) {
  std::vector<tsa::VoteBinInput> in{{std::nullopt, std::vector<SentimentLabel>(6, Pos), Pos, Pos}};
  EXPECT_THROW(tsa::vote_bin_f1(in), tsa::MetricError);
}
