#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "efcxr/cohort.hpp"
#include "efcxr/types.hpp"

namespace efcxr::evaluation {

/// Probabilities above this threshold predict Reduced EF; exactly 0.5 is a
/// Preserved EF prediction.
inline constexpr double kDecisionThreshold = 0.5;

inline Label predict_label(double p_reduced) {
  return p_reduced > kDecisionThreshold ? Label::ReducedEF : Label::PreservedEF;
}

struct PredictionRecord {
  std::string study_id;
  double p_reduced = 0.5;
  Label predicted = Label::PreservedEF;
  Label truth = Label::PreservedEF;

  static PredictionRecord make(std::string study_id, double p_reduced, Label truth) {
    return {std::move(study_id), p_reduced, predict_label(p_reduced), truth};
  }
  bool correct() const noexcept { return predicted == truth; }
  bool operator==(const PredictionRecord&) const = default;
};

/// CSV `study_id,p_reduced,predicted,truth`; probabilities are written with
/// round-trip precision.
std::string predictions_to_csv(const std::vector<PredictionRecord>& preds);
std::vector<PredictionRecord> predictions_from_csv(std::string_view content,
                                                   std::string_view source = {});
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

/// Positive class is Reduced EF.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  std::size_t correct() const noexcept { return tp + tn; }
  std::size_t errors() const noexcept { return fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion_counts(const std::vector<PredictionRecord>& preds);

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;  ///< records whose truth is this class
  /// Set when the metric's denominator was zero; the value is then 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct MetricsReport {
  ClassMetrics reduced;
  ClassMetrics preserved;
  double accuracy = 0;
  double misclassification_rate = 0;
  std::size_t total = 0;
  ConfusionCounts counts;

  const ClassMetrics& of(Label label) const {
    return label == Label::ReducedEF ? reduced : preserved;
  }
};

/// 2PR/(P+R), and 0 when P + R = 0.
double f1_score(double precision, double recall);

MetricsReport classification_report(const std::vector<PredictionRecord>& preds);
MetricsReport classification_report(const ConfusionCounts& counts);

double misclassification_rate(const std::vector<PredictionRecord>& preds);

struct BucketCounts {
  std::size_t hi = 0;   ///< p_reduced > hi_threshold
  std::size_t lo = 0;   ///< p_reduced < lo_threshold
  std::size_t mid = 0;
  std::size_t total() const noexcept { return hi + lo + mid; }
  bool operator==(const BucketCounts&) const = default;
};

/// Buckets over the raw Reduced-EF probability, for all records and for the
/// misclassified ones.
struct ConfidenceBuckets {
  double hi_threshold = 0.9;
  double lo_threshold = 0.1;
  BucketCounts all;
  BucketCounts misclassified;
};

ConfidenceBuckets confidence_buckets(const std::vector<PredictionRecord>& preds,
                                     double hi_threshold = 0.9, double lo_threshold = 0.1);

enum class Facet { Race, Sex };
std::string_view to_string(Facet facet);
Facet parse_facet(std::string_view text);

struct GroupReport {
  MetricsReport metrics;
  bool low_support = false;
};

struct SubgroupReport {
  Facet facet = Facet::Race;
  std::size_t min_support = 5;
  /// Keyed by category name (race or sex). Groups with no records are absent.
  std::map<std::string, GroupReport> groups;
};

/// Partitions predictions by the study's race or sex and reports each group.
/// Groups with fewer than `min_support` records are flagged, not dropped.
/// Throws ValidationError naming any study_id missing from the manifest.
SubgroupReport subgroup_report(const std::vector<PredictionRecord>& preds,
                               const cohort::CohortManifest& manifest, Facet facet,
                               std::size_t min_support = 5);

// Rendering ---------------------------------------------------------------------

/// Per-class precision / recall / F1 table, two decimals.
std::string render_metrics_table(const std::string& title, const MetricsReport& report);
std::string render_buckets(const ConfidenceBuckets& buckets, const ConfusionCounts& counts);
std::string render_subgroups(const SubgroupReport& report);

/// Full-precision JSON with keys per_class, overall, buckets, subgroups.
std::string metrics_json(const MetricsReport& report, const ConfidenceBuckets& buckets,
                         const std::vector<SubgroupReport>& subgroups);

/// Percentage with one decimal, e.g. 0.31192... -> "31.2%".
std::string format_percent(double fraction);

}  // namespace efcxr::evaluation
