#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "efcxr/text.hpp"
#include "efcxr/types.hpp"

namespace efcxr::cohort {

/// One chest X-ray study.
struct CohortRecord {
  std::string patient_id;
  std::string study_id;
  std::string image_ref;
  Label label = Label::PreservedEF;
  std::optional<int> age;
  Sex sex = Sex::Unknown;
  RaceEthnicity race_ethnicity = RaceEthnicity::Missing;

  bool operator==(const CohortRecord&) const = default;
};

class CohortManifest {
 public:
  CohortManifest() = default;
  /// Throws ValidationError on a duplicate study_id.
  CohortManifest(std::vector<CohortRecord> records, std::string provenance,
                 std::string created_at = {});

  const std::vector<CohortRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::string& provenance() const noexcept { return provenance_; }
  const std::string& created_at() const noexcept { return created_at_; }

  std::size_t count(Label label) const;
  /// nullptr when the study is not in the manifest.
  const CohortRecord* find(const std::string& study_id) const;

  /// CSV with header study_id,patient_id,image_ref,label,age,sex,race_ethnicity.
  std::string to_csv() const;
  static CohortManifest from_csv(std::string_view content, std::string_view source = {});
  static CohortManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<CohortRecord> records_;
  std::map<std::string, std::size_t> by_study_;
  std::string provenance_;
  std::string created_at_;
};

/// ICD code sets that define each label. The two sets must be disjoint.
class IcdLabelMap {
 public:
  IcdLabelMap() = default;
  IcdLabelMap(std::set<std::string> reduced_codes, std::set<std::string> preserved_codes);

  const std::set<std::string>& reduced_codes() const noexcept { return reduced_; }
  const std::set<std::string>& preserved_codes() const noexcept { return preserved_; }

  /// Two-column CSV `code,label` with label `reduced` or `preserved`.
  static IcdLabelMap from_csv(std::string_view content, std::string_view source = {});
  static IcdLabelMap read(const std::filesystem::path& path);

 private:
  std::set<std::string> reduced_;
  std::set<std::string> preserved_;
};

/// Raised when metadata filtering leaves no studies.
class EmptyCohortError : public Error {
 public:
  using Error::Error;
};

struct BuildResult {
  CohortManifest manifest;
  /// Studies carrying codes from both sets; excluded from the manifest.
  std::size_t conflict_count = 0;
  std::vector<std::string> conflict_study_ids;
  /// Studies matching neither set.
  std::size_t unmatched_count = 0;
  std::vector<std::string> warnings;
};

/// Filters metadata rows to studies whose diagnosis codes intersect exactly
/// one of the label code sets. Required columns: study_id, patient_id,
/// image_ref, icd_codes (separated by ';' or '|'), age, sex, race_ethnicity.
/// Throws SchemaError naming a missing column and Error when nothing matches.
BuildResult build_cohort(const text::CsvTable& metadata, const IcdLabelMap& icd_map,
                         std::string provenance = "metadata");

// Demographics -----------------------------------------------------------------

struct CategoryCount {
  std::string name;
  std::size_t count = 0;
  /// 100 * count / total, rounded to one decimal.
  double percent = 0;
};

struct DemographicsSummary {
  std::size_t total = 0;
  std::vector<CategoryCount> race;   ///< cohort table order; Missing only when present
  std::vector<CategoryCount> sex;    ///< Female, Male, Unknown (when present)
  std::vector<CategoryCount> label;  ///< Reduced EF, Preserved EF
  std::size_t age_known = 0;
  std::optional<double> age_median;
  std::optional<double> age_q1;
  std::optional<double> age_q3;

  const CategoryCount* find_race(std::string_view name) const;
  const CategoryCount* find_sex(std::string_view name) const;
};

DemographicsSummary summarize_demographics(const CohortManifest& manifest);

/// Plain-text rendering in the cohort table layout.
std::string render_demographics(const DemographicsSummary& summary);
std::string demographics_json(const DemographicsSummary& summary);

/// Linear-interpolation quantile (numpy's default) of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q);

// Splitting --------------------------------------------------------------------

enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SplitFractions {
  double train = 0.65;
  double val = 0.10;
  double test = 0.25;

  std::array<double, 3> as_array() const { return {train, val, test}; }
  /// Each fraction in [0, 1], summing to 1 within 1e-9.
  void validate() const;
};

class SplitAssignment {
 public:
  SplitAssignment() = default;

  void assign(const std::string& study_id, Split split);
  std::optional<Split> find(const std::string& study_id) const;
  const std::map<std::string, Split>& assignment() const noexcept { return assignment_; }
  std::size_t count(Split split) const;
  std::size_t size() const noexcept { return assignment_.size(); }

  SplitFractions requested;
  std::uint64_t seed = 0;

  /// Study fractions actually realised.
  SplitFractions realized() const;

  /// CSV `study_id,split`, rows in the order of `manifest`.
  std::string to_csv(const CohortManifest& manifest) const;
  static SplitAssignment from_csv(std::string_view content, std::string_view source = {});
  static SplitAssignment read(const std::filesystem::path& path);

  std::vector<const CohortRecord*> records_in(const CohortManifest& manifest, Split split) const;

 private:
  std::map<std::string, Split> assignment_;
};

/// Patient-grouped split. Patients are shuffled with the seed, ordered by
/// decreasing study count (stable, so the shuffle breaks ties) and each is
/// placed in the split whose study count is furthest below its target.
SplitAssignment split_cohort(const CohortManifest& manifest, const SplitFractions& fractions,
                             std::uint64_t seed);

struct LeakageReport {
  /// Patients with studies in more than one split.
  std::vector<std::string> crossing_patients;
  /// image_refs present in more than one split.
  std::vector<std::string> crossing_image_refs;

  bool clean() const noexcept { return crossing_patients.empty() && crossing_image_refs.empty(); }
  std::string to_json() const;
};

/// Throws ValidationError when a study in the assignment is missing from the
/// manifest or a manifest study is unassigned.
LeakageReport check_leakage(const SplitAssignment& assignment, const CohortManifest& manifest);

// Synthetic cohort ----------------------------------------------------------------

struct SyntheticOptions {
  int n = 200;
  double class_signal = 1.0;
  std::uint64_t seed = 7;
  int image_size = 64;
};

/// Ground truth the generator planted, for test assertions.
struct SyntheticTruth {
  struct Entry {
    std::string study_id;
    Label label;
    double heart_radius;     ///< horizontal semi-axis, pixels
    double heart_intensity;  ///< planted ellipse intensity
  };
  SyntheticOptions options;
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> race_counts;
  std::map<std::string, std::size_t> sex_counts;
  std::map<std::string, std::size_t> label_counts;

  std::string to_json() const;
};

struct SyntheticCohort {
  CohortManifest manifest;
  SyntheticTruth truth;
};

/// Writes `n` grayscale PNGs under `directory/images/` plus
/// `directory/synthetic_truth.json`; image_refs are relative to `directory`.
/// Reduced-EF images carry a central bright ellipse enlarged in proportion
/// to class_signal. Throws ValidationError when n < 10.
SyntheticCohort generate_synthetic_cohort(const SyntheticOptions& options,
                                          const std::filesystem::path& directory);

}  // namespace efcxr::cohort
