#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ooc/evaluator.hpp"
#include "ooc/extractor.hpp"
#include "ooc/manifest.hpp"
#include "oracles.hpp"
#include "report_fixture.hpp"

using namespace ooc;

namespace {

constexpr auto M = Label::Match;
constexpr auto X = Label::Mismatch;

std::vector<PredictionRecord> records(std::vector<Label> truth, std::vector<Predicted> pred) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out.push_back({"r" + std::to_string(i), truth[i], pred[i], std::nullopt});
  }
  return out;
}

std::vector<PredictionRecord> scored(std::vector<double> mismatch_scores,
                                     std::vector<double> match_scores) {
  std::vector<PredictionRecord> out;
  for (double s : mismatch_scores) out.push_back({"x", X, Predicted::Mismatch, s});
  for (double s : match_scores) out.push_back({"m", M, Predicted::Match, s});
  return out;
}

// Dyadic grid scores keep 1 - s exact; a coarse grid forces many ties.
std::vector<PredictionRecord> random_scored(std::mt19937_64& rng) {
  const std::size_t n = 2 + rng() % 49;
  const int grid = (rng() % 3 == 0) ? 4 : 64;
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Label y = i == 0 ? M : i == 1 ? X : (rng() % 2 ? M : X);
    out.push_back({"r" + std::to_string(i), y, Predicted::Match,
                   static_cast<double>(rng() % (grid + 1)) / grid});
  }
  return out;
}

}  // namespace

TEST(Score, PerfectPredictor) {
  const auto m = score_predictions(records({M, M, X, X}, {Predicted::Match, Predicted::Match,
                                                          Predicted::Mismatch,
                                                          Predicted::Mismatch}));
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(*m.pristine, 1.0);
  EXPECT_EQ(*m.falsified, 1.0);
}

TEST(Score, OneMatchMissed) {
  const auto m = score_predictions(records({M, M, X, X}, {Predicted::Match, Predicted::Mismatch,
                                                          Predicted::Mismatch,
                                                          Predicted::Mismatch}));
  EXPECT_EQ(m.accuracy, 0.75);
  EXPECT_EQ(*m.pristine, 0.5);
  EXPECT_EQ(*m.falsified, 1.0);
}

TEST(Score, UnknownCountsAsWrong) {
  const auto m = score_predictions(records({M, X}, {Predicted::Unknown, Predicted::Mismatch}));
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(*m.pristine, 0.0);
  EXPECT_EQ(m.unknown_rate, 0.5);
  EXPECT_FALSE(m.auc);
}

TEST(Score, InputErrors) {
  EXPECT_THROW(score_predictions({}), DataError);
  auto mixed = scored({0.5}, {0.5});
  mixed[1].score.reset();
  EXPECT_THROW(score_predictions(mixed), DataError);
  EXPECT_THROW(score_predictions(scored({1.5}, {0.5})), DataError);
}

TEST(Auc, WorkedExamples) {
  EXPECT_EQ(auc(scored({0.9, 0.8}, {0.3})), 1.0);
  EXPECT_EQ(auc(scored({0.6, 0.4}, {0.6, 0.4})), 0.5);
  EXPECT_EQ(auc(scored({0.7, 0.7, 0.7}, {0.7, 0.7})), 0.5);
  EXPECT_THROW(auc(scored({0.3}, {})), DataError);
}

TEST(Auc, EqualsPairwiseBruteForce) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const auto recs = random_scored(rng);
    std::vector<oracle::ScoredLabel> xs;
    for (const auto& r : recs) xs.push_back({*r.score, r.true_label == X});
    const auto [num, den] = oracle::brute_force_auc(xs);
    const auto frac = auc_fraction(recs);
    // Compare a/b == c/d without division.
    EXPECT_EQ(frac.twice_wins * den, num * frac.twice_pairs) << "trial " << trial;
  }
}

TEST(Auc, ComplementSymmetry) {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 200; ++trial) {
    auto recs = random_scored(rng);
    const double before = auc(recs);
    for (auto& r : recs) {
      r.true_label = r.true_label == M ? X : M;
      r.score = 1.0 - *r.score;
    }
    EXPECT_EQ(auc(recs), before);
  }
}

TEST(Auc, PermutationInvariant) {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    auto recs = random_scored(rng);
    const auto a = auc_fraction(recs);
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto b = auc_fraction(recs);
    EXPECT_EQ(a.twice_wins, b.twice_wins);
  }
}

TEST(Metrics, AccuracyDecomposesIntoClassRates) {
  std::mt19937_64 rng(404);
  const Predicted preds[] = {Predicted::Match, Predicted::Mismatch, Predicted::Unknown};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PredictionRecord> recs;
    const std::size_t n = 2 + rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      recs.push_back({"r", i == 0 ? M : i == 1 ? X : (rng() % 2 ? M : X), preds[rng() % 3],
                      std::nullopt});
    }
    const auto m = score_predictions(recs);
    const double combined = (static_cast<double>(m.n_match) * *m.pristine +
                             static_cast<double>(m.n_mismatch) * *m.falsified) /
                            static_cast<double>(m.n_total);
    EXPECT_NEAR(m.accuracy, combined, 1e-12);
    EXPECT_EQ(m.correct_match + m.correct_mismatch,
              static_cast<std::size_t>(std::count_if(recs.begin(), recs.end(),
                                                     [](const auto& r) { return r.correct(); })));
  }
}

TEST(Predictions, FileRoundTrip) {
  auto recs = scored({0.25, 0.75}, {0.5});
  recs.push_back({"u", M, Predicted::Unknown, 0.0});
  std::istringstream in(serialize_predictions(recs));
  EXPECT_EQ(load_predictions(in), recs);
}

TEST(Compare, FixtureCountsAreTheBruteForceOptimum) {
  std::size_t hits = 0;
  const auto found = testsupport::find_report_counts(testsupport::kFixturePerClass, &hits);
  ASSERT_TRUE(found);
  EXPECT_GT(hits, 0u);
  EXPECT_EQ(found->correct_match, testsupport::kFixtureCorrectMatch);
  EXPECT_EQ(found->correct_mismatch, testsupport::kFixtureCorrectMismatch);
}

TEST(Compare, FixtureRowAndFlaggedGain) {
  const auto m = score_predictions(testsupport::report_fixture_records(), "Our Method",
                                   std::string(splits::kMergedBalanced));
  const std::vector<RoleReport> reports = {{ReportRole::Ours, m}};
  const auto cmp = compare_report(reports, BaselineTable::published());
  ASSERT_EQ(cmp.rows.size(), 1u);
  const auto& row = cmp.rows[0];
  EXPECT_TRUE(row.flagged);
  EXPECT_EQ(testsupport::two_decimals(*row.gain), "0.15");
  EXPECT_NE(cmp.text.find("  0.80  0.78  0.81"), std::string::npos) << cmp.text;
  EXPECT_NE(cmp.text.find("  0.65  0.67  0.64"), std::string::npos) << cmp.text;
  EXPECT_NE(cmp.text.find("  0.15 *"), std::string::npos) << cmp.text;
  EXPECT_TRUE(cmp.warnings.empty());
}

TEST(Compare, SceneRowRendersOurColumns) {
  MetricsReport m;
  m.split_name = std::string(splits::kSceneResNetPlace);
  m.accuracy = 0.84;
  m.pristine = 0.83;
  m.falsified = 0.85;
  m.auc = 0.83;
  const std::vector<RoleReport> reports = {{ReportRole::Ours, m}};
  const auto cmp = compare_report(reports, BaselineTable::published());
  EXPECT_NE(cmp.text.find("  0.84  0.83  0.85  0.83 |"), std::string::npos) << cmp.text;
}

TEST(Compare, SelfComparisonIsNotFlagged) {
  MetricsReport m;
  m.split_name = "custom";
  m.accuracy = 0.7;
  BaselineTable table{{{"custom", std::string(kNewsClippingsSystem), 0.7, std::nullopt,
                        std::nullopt}}};
  const std::vector<RoleReport> reports = {{ReportRole::Ours, m}};
  const auto cmp = compare_report(reports, table);
  EXPECT_EQ(*cmp.rows[0].gain, 0.0);
  EXPECT_FALSE(cmp.rows[0].flagged);
}

TEST(Compare, GainAtThresholdIsFlagged) {
  MetricsReport m;
  m.split_name = "custom";
  m.accuracy = 0.73;
  BaselineTable table{{{"custom", std::string(kNewsClippingsSystem), 0.65, std::nullopt,
                        std::nullopt}}};
  const std::vector<RoleReport> reports = {{ReportRole::Ours, m}};
  EXPECT_TRUE(compare_report(reports, table).rows[0].flagged);
}

TEST(Compare, MissingBaselineWarnsAndBlanks) {
  MetricsReport m;
  m.split_name = "unpublished";
  m.accuracy = 0.9;
  const std::vector<RoleReport> reports = {{ReportRole::Ours, m}};
  const auto cmp = compare_report(reports, BaselineTable::published());
  ASSERT_EQ(cmp.warnings.size(), 1u);
  EXPECT_FALSE(cmp.rows[0].gain);
  EXPECT_FALSE(cmp.rows[0].flagged);
}

TEST(Compare, MeasuredZeroShotCountsAsBaseline) {
  MetricsReport ours;
  ours.split_name = "custom";
  ours.accuracy = 0.8;
  MetricsReport zs = ours;
  zs.accuracy = 0.75;
  const std::vector<RoleReport> reports = {{ReportRole::Ours, ours}, {ReportRole::ZeroShot, zs}};
  const auto cmp = compare_report(reports, BaselineTable{});
  EXPECT_NEAR(*cmp.rows[0].gain, 0.05, 1e-12);
  EXPECT_FALSE(cmp.rows[0].flagged);
}

TEST(Baselines, PublishedValues) {
  const auto t = BaselineTable::published();
  const auto* nc = t.find(splits::kMergedBalanced, kNewsClippingsSystem);
  ASSERT_NE(nc, nullptr);
  EXPECT_EQ(nc->accuracy, 0.65);
  EXPECT_EQ(*nc->pristine, 0.67);
  EXPECT_EQ(*nc->falsified, 0.64);
  const auto* zs = t.find(splits::kMergedBalanced, kZeroShotSystem);
  ASSERT_NE(zs, nullptr);
  EXPECT_EQ(zs->accuracy, 0.63);
  EXPECT_EQ(t.for_split(splits::kSceneResNetPlace).size(), 2u);
}

TEST(Baselines, ShippedFileEqualsBuiltin) {
  const auto shipped = BaselineTable::load(std::string(OOC_DATA_DIR) + "/baselines.json");
  EXPECT_EQ(shipped.to_json(), BaselineTable::published().to_json());
}
