#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efcxr/cohort.hpp"
#include "efcxr/evaluation.hpp"
#include "efcxr/explain.hpp"
#include "efcxr/models.hpp"
#include "efcxr/training.hpp"

namespace efcxr::run {

/// Where the cohort comes from: either user metadata plus an ICD map, or
/// the synthetic generator.
struct CohortSource {
  std::optional<cohort::SyntheticOptions> synthetic;
  std::filesystem::path metadata;
  std::filesystem::path icd_map;
  /// Base directory for relative image_refs. Defaults to the metadata file's
  /// directory (or the run directory for synthetic cohorts).
  std::filesystem::path image_root;
};

struct EvaluationSettings {
  double hi_threshold = 0.9;
  double lo_threshold = 0.1;
  std::vector<evaluation::Facet> subgroups = {evaluation::Facet::Race, evaluation::Facet::Sex};
  std::size_t min_support = 5;
};

struct ExplainSettings {
  std::size_t k = 6;
  double alpha = 0.5;
  std::vector<explain::Method> methods = {explain::Method::Saliency, explain::Method::GradCAM};
};

struct RunConfig {
  std::string run_id = "run";
  /// Empty: $EFCXR_OUT_ROOT, then ./out.
  std::filesystem::path output_root;
  CohortSource cohort;
  cohort::SplitFractions fractions;
  std::uint64_t split_seed = 0;
  models::ModelConfig model;
  training::TrainConfig train;
  EvaluationSettings evaluation;
  ExplainSettings explain;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Fail-closed: unknown keys and wrongly typed values raise
  /// ValidationError with the JSON path. Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig read(const std::filesystem::path& path);
};

/// Published settings: ResNet50 on ImageNet weights, 224 x 224, batch 32.
RunConfig paper_profile();
/// Desk-scale profile: synthetic n=200 cohort, TinyConv at 64 x 64,
/// batch 1, 10 epochs.
RunConfig tiny_profile();

/// Name of the environment variable holding the default output root.
inline constexpr const char* kOutputRootEnv = "EFCXR_OUT_ROOT";

std::filesystem::path resolve_output_root(const RunConfig& config);

}  // namespace efcxr::run
