#include <gtest/gtest.h>

#include <map>
#include <numeric>

#include <fmt/format.h>

#include "efcxr/cohort.hpp"
#include "efcxr/imaging.hpp"
#include "support/oracles.hpp"

using namespace efcxr;
using namespace efcxr::cohort;

namespace {

const IcdLabelMap& icd() {
  static const IcdLabelMap m({"I50.2", "I50.21", "I50.22"}, {"I50.3", "I50.31"});
  return m;
}

// 40 reduced, 50 preserved, 5 conflicting and 5 unmatched rows.
text::CsvTable hundred_rows() {
  std::string csv = "study_id,patient_id,image_ref,icd_codes,age,sex,race_ethnicity\n";
  for (int i = 0; i < 100; ++i) {
    std::string codes;
    if (i < 40) codes = i % 2 ? "I50.21" : "i5022;E11.9";
    else if (i < 90) codes = "I50.31|E11.9";
    else if (i < 95) codes = "I50.21;I50.31";
    else codes = "E11.9";
    csv += fmt::format("s{},p{},img/{}.png,{},{},{},{}\n", i, i / 3, i, codes, 40 + i % 50,
                       i % 2 ? "F" : "M", i % 5 ? "WHITE" : "BLACK/AFRICAN AMERICAN");
  }
  return text::parse_csv(csv);
}

CohortRecord rec(std::string patient, std::string study, Label label = Label::PreservedEF) {
  CohortRecord r;
  r.patient_id = std::move(patient);
  r.study_id = study;
  r.image_ref = "images/" + study + ".png";
  r.label = label;
  return r;
}

// Random manifest with 1..8 studies per patient.
CohortManifest random_manifest(std::uint64_t seed, int patients) {
  RngStream rng(seed);
  std::vector<CohortRecord> records;
  for (int p = 0; p < patients; ++p) {
    const int studies = 1 + static_cast<int>(rng.below(rng.bernoulli(0.2) ? 8 : 2));
    for (int s = 0; s < studies; ++s) {
      records.push_back(rec(fmt::format("p{}", p), fmt::format("p{}s{}", p, s),
                            rng.bernoulli(0.55) ? Label::ReducedEF : Label::PreservedEF));
    }
  }
  return CohortManifest(std::move(records), "random");
}

}  // namespace

// Build -----------------------------------------------------------------------------

TEST(BuildCohort, FiltersAndCountsConflicts) {
  const auto result = build_cohort(hundred_rows(), icd());
  EXPECT_EQ(result.manifest.size(), 90u);
  EXPECT_EQ(result.manifest.count(Label::ReducedEF), 40u);
  EXPECT_EQ(result.manifest.count(Label::PreservedEF), 50u);
  EXPECT_EQ(result.conflict_count, 5u);
  EXPECT_EQ(result.unmatched_count, 5u);
  EXPECT_EQ(result.conflict_study_ids.front(), "s90");
}

TEST(BuildCohort, EveryRecordMatchesExactlyOneCodeSet) {
  const auto table = hundred_rows();
  const auto result = build_cohort(table, icd());
  std::map<std::string, std::string> codes;
  for (const auto& row : table.rows) codes[row[0]] = text::upper(row[3]);
  for (const auto& r : result.manifest.records()) {
    const std::string& c = codes.at(r.study_id);
    const bool has_reduced = c.find("I50.2") != std::string::npos || c.find("I5022") != std::string::npos;
    const bool has_preserved = c.find("I50.3") != std::string::npos;
    EXPECT_NE(has_reduced, has_preserved) << r.study_id;
    EXPECT_EQ(r.label == Label::ReducedEF, has_reduced) << r.study_id;
  }
}

TEST(BuildCohort, MissingColumnIsNamed) {
  const auto table = text::parse_csv("study_id,patient_id,image_ref,age,sex,race_ethnicity\n");
  try {
    build_cohort(table, icd(), "meta.csv");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("icd_codes"), std::string::npos);
  }
}

TEST(BuildCohort, NothingMatchingIsAnError) {
  const auto table = text::parse_csv(
      "study_id,patient_id,image_ref,icd_codes,age,sex,race_ethnicity\n"
      "s1,p1,a.png,E11.9,50,F,WHITE\n");
  EXPECT_THROW(build_cohort(table, icd()), EmptyCohortError);
}

TEST(BuildCohort, RaceMappingAndWarnings) {
  const auto table = text::parse_csv(
      "study_id,patient_id,image_ref,icd_codes,age,sex,race_ethnicity\n"
      "s1,p1,a.png,I50.21,50,F,ASIAN - KOREAN\n"
      "s2,p2,b.png,I50.31,,M,ZZZ\n");
  const auto result = build_cohort(table, icd());
  EXPECT_EQ(result.manifest.find("s1")->race_ethnicity, RaceEthnicity::Asian);
  EXPECT_EQ(result.manifest.find("s2")->race_ethnicity, RaceEthnicity::Other);
  EXPECT_FALSE(result.manifest.find("s2")->age.has_value());
  ASSERT_EQ(result.warnings.size(), 1u);
  EXPECT_NE(result.warnings[0].find("ZZZ"), std::string::npos);
}

TEST(IcdMap, SetsMustBeDisjoint) {
  EXPECT_THROW(IcdLabelMap({"I50.2"}, {"I502"}), ValidationError);
  const auto m = IcdLabelMap::from_csv("code,label\nI50.2,reduced\nI50.3,preserved\n");
  EXPECT_EQ(m.reduced_codes().count("I502"), 1u);
  EXPECT_THROW(IcdLabelMap::from_csv("code,label\nI50.2,mid\n"), SchemaError);
}

TEST(Manifest, CsvRoundTrip) {
  std::vector<CohortRecord> records = {rec("p1", "s1", Label::ReducedEF), rec("p1", "s2"), rec("p2", "s,3")};
  records[0].age = 71;
  records[0].sex = Sex::Female;
  records[0].race_ethnicity = RaceEthnicity::HispanicLatino;
  records[2].race_ethnicity = RaceEthnicity::UnableToObtain;
  const CohortManifest m(records, "test");
  const auto back = CohortManifest::from_csv(m.to_csv());
  EXPECT_EQ(back.records(), m.records());
}

TEST(Manifest, DuplicateStudyRejected) {
  EXPECT_THROW(CohortManifest({rec("p1", "s1"), rec("p2", "s1")}, "x"), ValidationError);
}

// Demographics ------------------------------------------------------------------------

TEST(Demographics, SingleRecordIsHundredPercent) {
  auto r = rec("p", "s", Label::ReducedEF);
  r.sex = Sex::Female;
  r.race_ethnicity = RaceEthnicity::Asian;
  r.age = 60;
  const auto s = summarize_demographics(CohortManifest({r}, "x"));
  EXPECT_EQ(s.find_race("Asian")->percent, 100.0);
  EXPECT_EQ(s.find_race("White/Caucasian")->count, 0u);
  EXPECT_EQ(s.find_sex("Female")->percent, 100.0);
  EXPECT_EQ(s.label[0].percent, 100.0);
  EXPECT_EQ(*s.age_median, 60.0);
}

TEST(Demographics, PlantedCountsAreRecovered) {
  const auto dir = oracle::scratch_dir("demo");
  SyntheticOptions opt;
  opt.n = 300;
  opt.image_size = 16;
  const auto syn = generate_synthetic_cohort(opt, dir);
  const auto s = summarize_demographics(syn.manifest);
  EXPECT_EQ(s.total, 300u);
  for (const auto& [name, count] : syn.truth.race_counts) EXPECT_EQ(s.find_race(name)->count, count) << name;
  for (const auto& [name, count] : syn.truth.sex_counts) EXPECT_EQ(s.find_sex(name)->count, count) << name;
  EXPECT_EQ(s.label[0].count, syn.truth.label_counts.at("reduced"));
}

TEST(Demographics, CountsConservedAndPercentagesSumToHundred) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    std::vector<CohortRecord> records;
    const int n = 5 + static_cast<int>(rng.below(300));
    for (int i = 0; i < n; ++i) {
      auto r = rec(fmt::format("p{}", i), fmt::format("s{}", i));
      r.race_ethnicity = kAllRaces[rng.below(kAllRaces.size())];
      r.sex = kAllSexes[rng.below(3)];
      records.push_back(r);
    }
    const auto s = summarize_demographics(CohortManifest(records, "x"));
    for (const auto* facet : {&s.race, &s.sex}) {
      std::size_t count = 0;
      double pct = 0;
      for (const auto& c : *facet) count += c.count, pct += c.percent;
      EXPECT_EQ(count, static_cast<std::size_t>(n));
      EXPECT_NEAR(pct, 100.0, 0.05 * facet->size() + 1e-9);
    }
  }
}

TEST(Demographics, QuantileMatchesLinearInterpolation) {
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile_sorted({7}, 0.75), 7.0);
}

// Splitting ---------------------------------------------------------------------------

TEST(Split, AllTrainFraction) {
  const auto m = random_manifest(1, 40);
  const auto s = split_cohort(m, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(s.count(Split::Train), m.size());
  EXPECT_EQ(s.count(Split::Val) + s.count(Split::Test), 0u);
}

TEST(Split, InvalidFractionsRejected) {
  EXPECT_THROW((SplitFractions{0.5, 0.5, 0.5}.validate()), ValidationError);
  EXPECT_THROW((SplitFractions{-0.1, 0.6, 0.5}.validate()), ValidationError);
}

TEST(Split, LargePatientStaysTogether) {
  std::vector<CohortRecord> records;
  for (int s = 0; s < 7; ++s) records.push_back(rec("big", fmt::format("big{}", s)));
  for (int p = 0; p < 30; ++p) records.push_back(rec(fmt::format("p{}", p), fmt::format("s{}", p)));
  const CohortManifest m(records, "x");
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = split_cohort(m, {}, seed);
    const auto first = *s.find("big0");
    for (int i = 1; i < 7; ++i) ASSERT_EQ(*s.find(fmt::format("big{}", i)), first) << "seed " << seed;
    ASSERT_TRUE(check_leakage(s, m).clean());
  }
}

TEST(Split, DeterministicPerSeed) {
  const auto m = random_manifest(5, 200);
  EXPECT_EQ(split_cohort(m, {}, 9).assignment(), split_cohort(m, {}, 9).assignment());
  EXPECT_NE(split_cohort(m, {}, 9).assignment(), split_cohort(m, {}, 10).assignment());
}

TEST(Split, CsvRoundTrip) {
  const auto m = random_manifest(2, 50);
  const auto s = split_cohort(m, {}, 1);
  EXPECT_EQ(SplitAssignment::from_csv(s.to_csv(m)).assignment(), s.assignment());
}

TEST(Leakage, MovedStudyIsReported) {
  const auto m = random_manifest(3, 100);
  auto s = split_cohort(m, {}, 4);
  ASSERT_TRUE(check_leakage(s, m).clean());
  // Find a multi-study patient and move one of its studies elsewhere.
  std::map<std::string, std::vector<std::string>> by_patient;
  for (const auto& r : m.records()) by_patient[r.patient_id].push_back(r.study_id);
  for (const auto& [patient, studies] : by_patient) {
    if (studies.size() < 2) continue;
    const Split from = *s.find(studies[0]);
    s.assign(studies[0], from == Split::Train ? Split::Test : Split::Train);
    const auto report = check_leakage(s, m);
    ASSERT_EQ(report.crossing_patients, std::vector<std::string>{patient});
    return;
  }
  FAIL() << "no multi-study patient";
}

TEST(Leakage, DuplicateImageRefIsReported) {
  std::vector<CohortRecord> records;
  for (int p = 0; p < 20; ++p) records.push_back(rec(fmt::format("p{}", p), fmt::format("s{}", p)));
  records[1].image_ref = records[0].image_ref;
  const CohortManifest m(records, "x");
  SplitAssignment s;
  for (const auto& r : records) s.assign(r.study_id, Split::Train);
  s.assign("s1", Split::Test);
  const auto report = check_leakage(s, m);
  EXPECT_TRUE(report.crossing_patients.empty());
  EXPECT_EQ(report.crossing_image_refs, std::vector<std::string>{records[0].image_ref});
}

TEST(Leakage, UnassignedStudyIsAnError) {
  const auto m = random_manifest(4, 10);
  SplitAssignment s;
  s.assign(m.records()[0].study_id, Split::Train);
  EXPECT_THROW(check_leakage(s, m), ValidationError);
}

// Synthetic ---------------------------------------------------------------------------

TEST(Synthetic, SmallCohortWritesEveryImage) {
  const auto dir = oracle::scratch_dir("syn10");
  SyntheticOptions opt;
  opt.n = 10;
  const auto syn = generate_synthetic_cohort(opt, dir);
  EXPECT_EQ(syn.manifest.size(), 10u);
  for (const auto& r : syn.manifest.records()) EXPECT_TRUE(std::filesystem::exists(dir / r.image_ref));
  EXPECT_TRUE(std::filesystem::exists(dir / "synthetic_truth.json"));
  opt.n = 9;
  EXPECT_THROW(generate_synthetic_cohort(opt, dir), ValidationError);
}

namespace {

// Fits a central-brightness threshold on the first half and scores the second.
double held_out_threshold_accuracy(double signal) {
  const auto dir = oracle::scratch_dir("synsig");
  SyntheticOptions opt;
  opt.n = 200;
  opt.class_signal = signal;
  opt.seed = 17;
  const auto syn = generate_synthetic_cohort(opt, dir);
  std::vector<double> s_fit, s_eval;
  std::vector<Label> l_fit, l_eval;
  for (std::size_t i = 0; i < syn.manifest.size(); ++i) {
    const auto& r = syn.manifest.records()[i];
    const double v = oracle::central_mean(imaging::load_and_normalize(dir / r.image_ref, {64, 64}, 1));
    (i < 100 ? s_fit : s_eval).push_back(v);
    (i < 100 ? l_fit : l_eval).push_back(r.label);
  }
  return oracle::fixed_threshold_accuracy(s_eval, l_eval, oracle::fit_threshold(s_fit, l_fit));
}

}  // namespace

TEST(Synthetic, FullSignalIsSeparable) { EXPECT_EQ(held_out_threshold_accuracy(1.0), 1.0); }

TEST(Synthetic, ZeroSignalIsChance) {
  const double acc = held_out_threshold_accuracy(0.0);
  EXPECT_GE(acc, 0.40);
  EXPECT_LE(acc, 0.60);
}

TEST(Synthetic, SameSeedSameCohort) {
  SyntheticOptions opt;
  opt.n = 20;
  opt.image_size = 16;
  const auto a_dir = oracle::scratch_dir("syna"), b_dir = oracle::scratch_dir("synb");
  const auto a = generate_synthetic_cohort(opt, a_dir);
  const auto b = generate_synthetic_cohort(opt, b_dir);
  EXPECT_EQ(a.manifest.records(), b.manifest.records());
  for (const auto& r : a.manifest.records()) {
    EXPECT_EQ(text::sha256_file(a_dir / r.image_ref), text::sha256_file(b_dir / r.image_ref));
  }
}
