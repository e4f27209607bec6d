#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/evaluation.hpp"
#include "support/oracles.hpp"

using namespace efcxr;
using namespace efcxr::evaluation;

namespace {

std::vector<PredictionRecord> from_counts(int tp, int fp, int fn, int tn) {
  std::vector<PredictionRecord> out;
  int i = 0;
  auto add = [&](int n, double p, Label truth) {
    for (int k = 0; k < n; ++k) out.push_back(PredictionRecord::make(fmt::format("s{}", i++), p, truth));
  };
  add(tp, 0.8, Label::ReducedEF);
  add(fp, 0.8, Label::PreservedEF);
  add(fn, 0.2, Label::ReducedEF);
  add(tn, 0.2, Label::PreservedEF);
  return out;
}

}  // namespace

TEST(Metrics, HandWorkedExample) {
  const auto r = classification_report(from_counts(3, 1, 2, 4));
  EXPECT_EQ(r.counts, (ConfusionCounts{3, 1, 2, 4}));
  EXPECT_DOUBLE_EQ(r.reduced.precision, 0.75);
  EXPECT_DOUBLE_EQ(r.reduced.recall, 0.6);
  EXPECT_DOUBLE_EQ(r.reduced.f1, 2 * 0.75 * 0.6 / 1.35);
  EXPECT_DOUBLE_EQ(r.preserved.precision, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.preserved.recall, 0.8);
  EXPECT_EQ(r.reduced.support, 5u);
  EXPECT_EQ(r.preserved.support, 5u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(r.misclassification_rate, 0.3);
}

TEST(Metrics, ZeroDenominatorsAreFlagged) {
  const auto r = classification_report(from_counts(0, 0, 3, 2));
  EXPECT_TRUE(r.reduced.precision_undefined);
  EXPECT_EQ(r.reduced.precision, 0.0);
  EXPECT_EQ(r.reduced.recall, 0.0);
  EXPECT_EQ(r.reduced.f1, 0.0);
  EXPECT_FALSE(r.preserved.precision_undefined);
}

TEST(Metrics, HalfIsAPreservedPrediction) {
  EXPECT_EQ(predict_label(0.5), Label::PreservedEF);
  EXPECT_EQ(predict_label(std::nextafter(0.5, 1.0)), Label::ReducedEF);
}

TEST(Metrics, F1OfZeroIsZero) { EXPECT_EQ(f1_score(0, 0), 0.0); }

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 gen(100);
  for (int trial = 0; trial < 200; ++trial) {
    const auto preds = oracle::random_predictions(gen, 1 + gen() % 300);
    const auto r = classification_report(preds);
    const auto b = confidence_buckets(preds);
    const auto o = oracle::brute_force(preds);
    ASSERT_NEAR(r.reduced.precision, o.p_red, 1e-12);
    ASSERT_NEAR(r.reduced.recall, o.r_red, 1e-12);
    ASSERT_NEAR(r.reduced.f1, o.f_red, 1e-12);
    ASSERT_NEAR(r.preserved.precision, o.p_pre, 1e-12);
    ASSERT_NEAR(r.preserved.recall, o.r_pre, 1e-12);
    ASSERT_NEAR(r.preserved.f1, o.f_pre, 1e-12);
    ASSERT_NEAR(r.accuracy, o.accuracy, 1e-12);
    ASSERT_NEAR(misclassification_rate(preds), o.misclassification, 1e-12);
    ASSERT_EQ(b.all, (BucketCounts{o.hi, o.lo, o.mid}));
    ASSERT_EQ(b.misclassified, (BucketCounts{o.mis_hi, o.mis_lo, o.mis_mid}));
  }
}

TEST(Buckets, BoundariesAreExclusive) {
  std::vector<PredictionRecord> p = {PredictionRecord::make("a", 0.9, Label::ReducedEF),
                                     PredictionRecord::make("b", 0.1, Label::PreservedEF),
                                     PredictionRecord::make("c", 0.95, Label::PreservedEF),
                                     PredictionRecord::make("d", 0.01, Label::ReducedEF)};
  const auto b = confidence_buckets(p);
  EXPECT_EQ(b.all, (BucketCounts{1, 1, 2}));
  EXPECT_EQ(b.misclassified, (BucketCounts{1, 1, 0}));
}

TEST(Metrics, PermutationInvariant) {
  std::mt19937_64 gen(7);
  auto preds = oracle::random_predictions(gen, 150);
  const std::string before = metrics_json(classification_report(preds), confidence_buckets(preds), {});
  std::shuffle(preds.begin(), preds.end(), gen);
  EXPECT_EQ(metrics_json(classification_report(preds), confidence_buckets(preds), {}), before);
}

TEST(Predictions, CsvRoundTripIsExact) {
  std::mt19937_64 gen(8);
  const auto preds = oracle::random_predictions(gen, 100);
  EXPECT_EQ(predictions_from_csv(predictions_to_csv(preds)), preds);
}

TEST(Subgroups, PartitionCoversEveryRecord) {
  std::mt19937_64 gen(9);
  auto preds = oracle::random_predictions(gen, 120);
  std::vector<cohort::CohortRecord> records;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cohort::CohortRecord r;
    r.study_id = preds[i].study_id;
    r.patient_id = "p" + r.study_id;
    r.image_ref = r.study_id + ".png";
    r.label = preds[i].truth;
    r.sex = i % 3 == 0 ? Sex::Female : Sex::Male;
    r.race_ethnicity = i < 3 ? RaceEthnicity::Asian : RaceEthnicity::WhiteCaucasian;
    records.push_back(r);
  }
  const cohort::CohortManifest m(records, "x");
  for (Facet f : {Facet::Race, Facet::Sex}) {
    const auto rep = subgroup_report(preds, m, f, 5);
    ConfusionCounts sum;
    for (const auto& [name, g] : rep.groups) {
      sum.tp += g.metrics.counts.tp;
      sum.fp += g.metrics.counts.fp;
      sum.fn += g.metrics.counts.fn;
      sum.tn += g.metrics.counts.tn;
    }
    EXPECT_EQ(sum, confusion_counts(preds));
  }
  const auto race = subgroup_report(preds, m, Facet::Race, 5);
  EXPECT_TRUE(race.groups.at("Asian").low_support);
  EXPECT_FALSE(race.groups.at("White/Caucasian").low_support);

  // A study with no manifest entry is named.
  preds.push_back(PredictionRecord::make("ghost", 0.7, Label::ReducedEF));
  try {
    subgroup_report(preds, m, Facet::Sex);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Rendering, PercentAndJsonKeys) {
  EXPECT_EQ(format_percent(272.0 / 872.0), "31.2%");
  EXPECT_EQ(format_percent(0.0), "0.0%");
  const auto preds = from_counts(3, 1, 2, 4);
  const auto j = nlohmann::json::parse(metrics_json(classification_report(preds), confidence_buckets(preds), {}));
  for (const char* key : {"per_class", "overall", "buckets", "subgroups"}) EXPECT_TRUE(j.contains(key)) << key;
  const std::string table = render_metrics_table("Test", classification_report(preds));
  EXPECT_NE(table.find("0.75"), std::string::npos);
  EXPECT_NE(table.find("Reduced EF"), std::string::npos);
}
