#include <gtest/gtest.h>

#include <cstdlib>

#include "efcxr/pipeline.hpp"
#include "efcxr/run_config.hpp"
#include "support/oracles.hpp"

using namespace efcxr;
using run::RunConfig;

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = run::tiny_profile();
  c.run_id = "rt";
  c.fractions = {0.7, 0.1, 0.2};
  c.split_seed = 99;
  c.train.seed = 5;
  c.train.augmentation.rotation_enabled = false;
  c.explain.k = 3;
  c.evaluation.subgroups = {evaluation::Facet::Sex};
  const auto j = nlohmann::json::parse(c.to_json().dump());
  const RunConfig back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(back.split_seed, 99u);
  EXPECT_EQ(back.model.init_seed, training::init_seed_for(5));
  EXPECT_FALSE(back.train.augmentation.rotation_enabled);
}

TEST(RunConfig, UnknownKeyIsRejectedWithPath) {
  try {
    RunConfig::from_json(nlohmann::json::parse(R"({"train": {"learning_rate": 0.1}})"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("$.train.learning_rate"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, WrongTypeIsRejected) {
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(R"({"train": {"max_epochs": "ten"}})")), ValidationError);
}

TEST(RunConfig, InvalidFractionsRejected) {
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(R"({"split": {"train": 0.9, "val": 0.1, "test": 0.25}})")),
               ValidationError);
}

TEST(RunConfig, BothCohortSourcesRejected) {
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(
                   R"({"cohort": {"synthetic": {"n": 20}, "metadata": "m.csv", "icd_map": "i.csv"}})")),
               ValidationError);
}

TEST(RunConfig, EmptyObjectIsTheTinyProfile) {
  const RunConfig c = RunConfig::from_json(nlohmann::json::object());
  RunConfig t = run::tiny_profile();
  t.run_id = c.run_id;
  EXPECT_EQ(c.to_json(), t.to_json());
}

TEST(RunConfig, PaperProfileSettings) {
  const RunConfig p = run::paper_profile();
  EXPECT_EQ(p.model.backbone, models::BackboneKind::ResNet50);
  EXPECT_EQ(p.model.pretrained, models::Pretrained::ImageNet);
  EXPECT_EQ(p.model.input_height, 224);
  EXPECT_EQ(p.train.batch_size, 32);
  EXPECT_EQ(p.train.initial_lr, 0.001);
  EXPECT_EQ(p.train.plateau_patience, 5);
  EXPECT_EQ(p.train.lr_factor, 0.1);
  EXPECT_EQ(p.fractions.train, 0.65);
  EXPECT_EQ(p.fractions.val, 0.10);
  EXPECT_EQ(p.fractions.test, 0.25);
}

TEST(RunConfig, OutputRootFallsBackToEnvironment) {
  RunConfig c = run::tiny_profile();
  ::setenv(run::kOutputRootEnv, "/tmp/efcxr_env_root", 1);
  EXPECT_EQ(run::resolve_output_root(c), "/tmp/efcxr_env_root");
  c.output_root = "/elsewhere";
  EXPECT_EQ(run::resolve_output_root(c), "/elsewhere");
  ::unsetenv(run::kOutputRootEnv);
}

TEST(RunLock, LiveLockBlocksAndStaleLockIsTaken) {
  const auto dir = oracle::scratch_dir("lock");
  // A pid that cannot exist.
  text::write_file_atomic(dir / ".lock", "999999999\n");
  { pipeline::RunLock lock(dir); }
  EXPECT_FALSE(std::filesystem::exists(dir / ".lock"));
  // pid 1 is always alive.
  text::write_file_atomic(dir / ".lock", "1\n");
  EXPECT_THROW(pipeline::RunLock{dir}, Error);
  std::filesystem::remove(dir / ".lock");
}

TEST(Pipeline, MissingIcdMapFailsBeforeWriting) {
  const auto root = oracle::scratch_dir("pipe_icd");
  text::write_file_atomic(root / "meta.csv", "study_id,patient_id,image_ref,icd_codes,age,sex,race_ethnicity\n");
  RunConfig c = run::tiny_profile();
  c.output_root = root;
  c.cohort = {};
  c.cohort.metadata = root / "meta.csv";
  c.cohort.icd_map = root / "nope.csv";
  try {
    pipeline::cohort_build(c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.csv"), std::string::npos);
  }
  EXPECT_FALSE(std::filesystem::exists(pipeline::run_paths(c).manifest()));
}

TEST(Pipeline, ParameterReportFlagsEfficientNet) {
  const std::string report = pipeline::parameter_report();
  EXPECT_NE(report.find("DISCREPANCY"), std::string::npos);
  EXPECT_NE(report.find("345"), std::string::npos);
}

TEST(Pipeline, FailedStageLeavesMarker) {
  RunConfig c = run::tiny_profile();
  c.output_root = oracle::scratch_dir("pipe_fail");
  // No manifest yet, so split cannot start its work.
  EXPECT_THROW(pipeline::split(c), ValidationError);
  const auto paths = pipeline::run_paths(c);
  ASSERT_TRUE(std::filesystem::exists(paths.failure_marker("split")));
  const auto m = nlohmann::json::parse(text::read_file(paths.run_manifest()));
  EXPECT_EQ(m["stages"]["split"]["status"], "failed");
}
