#include "efcxr/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/rng.hpp"

namespace efcxr::cohort {

namespace {

const char* const kManifestHeader = "study_id,patient_id,image_ref,label,age,sex,race_ethnicity";

std::optional<int> parse_age(std::string_view raw, std::string_view where) {
  const std::string t = text::trim(raw);
  if (t.empty()) return std::nullopt;
  int value = 0;
  // Accept integral floats such as "71.0" as written by some exporters.
  double as_double = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), as_double);
  if (ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(as_double) ||
      as_double < 0 || as_double > 150) {
    throw SchemaError(fmt::format("invalid age '{}' {}", t, where));
  }
  value = static_cast<int>(std::lround(as_double));
  return value;
}

std::string normalize_code(std::string_view code) {
  std::string out;
  for (char c : text::upper(text::trim(code))) {
    if (c != '.') out.push_back(c);
  }
  return out;
}

double round1(double v) { return std::round(v * 10.0) / 10.0; }

}  // namespace

// CohortManifest ------------------------------------------------------------------

CohortManifest::CohortManifest(std::vector<CohortRecord> records, std::string provenance,
                               std::string created_at)
    : records_(std::move(records)),
      provenance_(std::move(provenance)),
      created_at_(std::move(created_at)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].study_id.empty()) {
      throw ValidationError(fmt::format("record {} has an empty study_id", i + 1));
    }
    if (!by_study_.emplace(records_[i].study_id, i).second) {
      throw ValidationError("duplicate study_id in manifest: " + records_[i].study_id);
    }
  }
}

std::size_t CohortManifest::count(Label label) const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(), [&](const CohortRecord& r) { return r.label == label; }));
}

const CohortRecord* CohortManifest::find(const std::string& study_id) const {
  auto it = by_study_.find(study_id);
  return it == by_study_.end() ? nullptr : &records_[it->second];
}

std::string CohortManifest::to_csv() const {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : records_) {
    out += text::csv_line({r.study_id, r.patient_id, r.image_ref, std::string(to_string(r.label)),
                           r.age ? std::to_string(*r.age) : std::string(),
                           std::string(to_string(r.sex)),
                           std::string(to_string(r.race_ethnicity))});
  }
  return out;
}

CohortManifest CohortManifest::from_csv(std::string_view content, std::string_view source) {
  const text::CsvTable table = text::parse_csv(content, source);
  const std::size_t c_study = table.column("study_id", source);
  const std::size_t c_patient = table.column("patient_id", source);
  const std::size_t c_ref = table.column("image_ref", source);
  const std::size_t c_label = table.column("label", source);
  const std::size_t c_age = table.column("age", source);
  const std::size_t c_sex = table.column("sex", source);
  const std::size_t c_race = table.column("race_ethnicity", source);

  std::vector<CohortRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = fmt::format("on row {} of {}", i + 2, source);
    CohortRecord r;
    r.study_id = text::trim(row[c_study]);
    r.patient_id = text::trim(row[c_patient]);
    r.image_ref = text::trim(row[c_ref]);
    if (r.patient_id.empty()) throw SchemaError("empty patient_id " + where);
    try {
      r.label = parse_label(row[c_label]);
    } catch (const SchemaError& e) {
      throw SchemaError(std::string(e.what()) + " " + where);
    }
    r.age = parse_age(row[c_age], where);
    r.sex = parse_sex(row[c_sex]);
    r.race_ethnicity = parse_race(row[c_race]);
    records.push_back(std::move(r));
  }
  return CohortManifest(std::move(records), std::string(source));
}

CohortManifest CohortManifest::read(const std::filesystem::path& path) {
  return from_csv(text::read_file(path), path.string());
}

void CohortManifest::write(const std::filesystem::path& path) const {
  text::write_file_atomic(path, to_csv());
}

// IcdLabelMap ---------------------------------------------------------------------

IcdLabelMap::IcdLabelMap(std::set<std::string> reduced_codes, std::set<std::string> preserved_codes) {
  for (const auto& c : reduced_codes) reduced_.insert(normalize_code(c));
  for (const auto& c : preserved_codes) preserved_.insert(normalize_code(c));
  for (const auto& c : reduced_) {
    if (preserved_.count(c)) {
      throw ValidationError("ICD code " + c + " is mapped to both reduced and preserved");
    }
  }
}

IcdLabelMap IcdLabelMap::from_csv(std::string_view content, std::string_view source) {
  const text::CsvTable table = text::parse_csv(content, source);
  const std::size_t c_code = table.column("code", source);
  const std::size_t c_label = table.column("label", source);
  std::set<std::string> reduced;
  std::set<std::string> preserved;
  for (const auto& row : table.rows) {
    const std::string code = text::trim(row[c_code]);
    if (code.empty()) continue;
    (parse_label(row[c_label]) == Label::ReducedEF ? reduced : preserved).insert(code);
  }
  return IcdLabelMap(std::move(reduced), std::move(preserved));
}

IcdLabelMap IcdLabelMap::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("ICD map file not found: " + path.string());
  }
  return from_csv(text::read_file(path), path.string());
}

// build_cohort --------------------------------------------------------------------

BuildResult build_cohort(const text::CsvTable& metadata, const IcdLabelMap& icd_map,
                         std::string provenance) {
  const std::size_t c_study = metadata.column("study_id", provenance);
  const std::size_t c_patient = metadata.column("patient_id", provenance);
  const std::size_t c_ref = metadata.column("image_ref", provenance);
  const std::size_t c_codes = metadata.column("icd_codes", provenance);
  const std::size_t c_age = metadata.column("age", provenance);
  const std::size_t c_sex = metadata.column("sex", provenance);
  const std::size_t c_race = metadata.column("race_ethnicity", provenance);

  BuildResult result;
  std::vector<CohortRecord> records;
  std::set<std::string> unrecognised_races;

  for (std::size_t i = 0; i < metadata.rows.size(); ++i) {
    const auto& row = metadata.rows[i];
    const std::string where = fmt::format("on row {} of {}", i + 2, provenance);

    bool reduced = false;
    bool preserved = false;
    std::string codes = row[c_codes];
    std::replace(codes.begin(), codes.end(), '|', ';');
    for (const auto& raw : text::split(codes, ';')) {
      const std::string code = normalize_code(raw);
      if (code.empty()) continue;
      reduced = reduced || icd_map.reduced_codes().count(code) > 0;
      preserved = preserved || icd_map.preserved_codes().count(code) > 0;
    }

    const std::string study_id = text::trim(row[c_study]);
    if (reduced && preserved) {
      ++result.conflict_count;
      result.conflict_study_ids.push_back(study_id);
      continue;
    }
    if (!reduced && !preserved) {
      ++result.unmatched_count;
      continue;
    }

    CohortRecord r;
    r.study_id = study_id;
    r.patient_id = text::trim(row[c_patient]);
    r.image_ref = text::trim(row[c_ref]);
    if (r.study_id.empty()) throw SchemaError("empty study_id " + where);
    if (r.patient_id.empty()) throw SchemaError("empty patient_id " + where);
    r.label = reduced ? Label::ReducedEF : Label::PreservedEF;
    r.age = parse_age(row[c_age], where);
    r.sex = parse_sex(row[c_sex]);
    bool recognised = true;
    r.race_ethnicity = parse_race(row[c_race], &recognised);
    if (!recognised) unrecognised_races.insert(text::trim(row[c_race]));
    records.push_back(std::move(r));
  }

  for (const auto& race : unrecognised_races) {
    result.warnings.push_back("unrecognised race/ethnicity '" + race + "' mapped to Other");
  }
  if (records.empty()) {
    throw EmptyCohortError(fmt::format(
        "empty cohort: none of {} metadata rows matched exactly one label code set "
        "({} conflicting, {} unmatched)",
        metadata.rows.size(), result.conflict_count, result.unmatched_count));
  }
  result.manifest = CohortManifest(std::move(records), std::move(provenance));
  return result;
}

// Demographics --------------------------------------------------------------------

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

const CategoryCount* DemographicsSummary::find_race(std::string_view name) const {
  for (const auto& c : race) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const CategoryCount* DemographicsSummary::find_sex(std::string_view name) const {
  for (const auto& c : sex) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

DemographicsSummary summarize_demographics(const CohortManifest& manifest) {
  if (manifest.empty()) throw ValidationError("cannot summarise an empty manifest");
  DemographicsSummary s;
  s.total = manifest.size();
  const double total = static_cast<double>(s.total);
  auto make = [&](std::string name, std::size_t count) {
    return CategoryCount{std::move(name), count, round1(100.0 * count / total)};
  };

  std::map<RaceEthnicity, std::size_t> race_counts;
  std::map<Sex, std::size_t> sex_counts;
  std::vector<double> ages;
  for (const auto& r : manifest.records()) {
    ++race_counts[r.race_ethnicity];
    ++sex_counts[r.sex];
    if (r.age) ages.push_back(*r.age);
  }

  for (RaceEthnicity race : kAllRaces) {
    if (race == RaceEthnicity::Missing) {
      if (race_counts[race] > 0) s.race.push_back(make("Missing", race_counts[race]));
    } else {
      s.race.push_back(make(std::string(to_string(race)), race_counts[race]));
    }
  }
  s.sex.push_back(make("Female", sex_counts[Sex::Female]));
  s.sex.push_back(make("Male", sex_counts[Sex::Male]));
  if (sex_counts[Sex::Unknown] > 0) s.sex.push_back(make("Unknown", sex_counts[Sex::Unknown]));
  s.label.push_back(make(std::string(display_name(Label::ReducedEF)), manifest.count(Label::ReducedEF)));
  s.label.push_back(
      make(std::string(display_name(Label::PreservedEF)), manifest.count(Label::PreservedEF)));

  s.age_known = ages.size();
  if (!ages.empty()) {
    std::sort(ages.begin(), ages.end());
    s.age_median = quantile_sorted(ages, 0.5);
    s.age_q1 = quantile_sorted(ages, 0.25);
    s.age_q3 = quantile_sorted(ages, 0.75);
  }
  return s;
}

std::string render_demographics(const DemographicsSummary& s) {
  std::string out;
  auto rule = [&] { out += fmt::format("+{:-<32}+{:-<30}+\n", "", ""); };
  auto section = [&](std::string_view title, const std::vector<CategoryCount>& rows) {
    rule();
    out += fmt::format("| {:<30} | {:<28} |\n", title, "Number in data (% of data)");
    rule();
    for (const auto& c : rows) {
      out += fmt::format("| {:<30} | {:<28} |\n", c.name,
                         fmt::format("{} ({:.1f}%)", c.count, c.percent));
    }
    rule();
  };
  out += fmt::format("Cohort size: {}\n", s.total);
  section("Race / Ethnicity", s.race);
  section("Sex", s.sex);
  section("Label", s.label);
  if (s.age_median) {
    out += fmt::format("Age: median {:g}, IQR {:g}-{:g} ({} with known age)\n", *s.age_median,
                       *s.age_q1, *s.age_q3, s.age_known);
  } else {
    out += "Age: unknown for all records\n";
  }
  return out;
}

std::string demographics_json(const DemographicsSummary& s) {
  using nlohmann::ordered_json;
  auto rows = [](const std::vector<CategoryCount>& v) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : v) arr.push_back({{"name", c.name}, {"count", c.count}, {"percent", c.percent}});
    return arr;
  };
  ordered_json j;
  j["total"] = s.total;
  j["race_ethnicity"] = rows(s.race);
  j["sex"] = rows(s.sex);
  j["label"] = rows(s.label);
  j["age"] = {{"known", s.age_known},
              {"median", s.age_median ? ordered_json(*s.age_median) : ordered_json(nullptr)},
              {"q1", s.age_q1 ? ordered_json(*s.age_q1) : ordered_json(nullptr)},
              {"q3", s.age_q3 ? ordered_json(*s.age_q3) : ordered_json(nullptr)}};
  return j.dump(2) + "\n";
}

// Splitting -----------------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "";
}

Split parse_split(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw SchemaError("unrecognised split '" + std::string(t) + "'");
}

void SplitFractions::validate() const {
  for (double f : as_array()) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ValidationError(fmt::format("split fraction {} outside [0, 1]", f));
    }
  }
  const double sum = train + val + test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError(fmt::format("split fractions ({}, {}, {}) sum to {}, not 1", train, val,
                                      test, sum));
  }
}

void SplitAssignment::assign(const std::string& study_id, Split split) {
  assignment_[study_id] = split;
}

std::optional<Split> SplitAssignment::find(const std::string& study_id) const {
  auto it = assignment_.find(study_id);
  if (it == assignment_.end()) return std::nullopt;
  return it->second;
}

std::size_t SplitAssignment::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(assignment_.begin(), assignment_.end(),
                                                [&](const auto& kv) { return kv.second == split; }));
}

SplitFractions SplitAssignment::realized() const {
  SplitFractions f;
  const double n = static_cast<double>(assignment_.size());
  if (n == 0) return {0, 0, 0};
  f.train = count(Split::Train) / n;
  f.val = count(Split::Val) / n;
  f.test = count(Split::Test) / n;
  return f;
}

std::string SplitAssignment::to_csv(const CohortManifest& manifest) const {
  std::string out = "study_id,split\n";
  for (const auto& r : manifest.records()) {
    auto s = find(r.study_id);
    if (!s) throw ValidationError("study " + r.study_id + " has no split assignment");
    out += text::csv_line({r.study_id, std::string(to_string(*s))});
  }
  return out;
}

SplitAssignment SplitAssignment::from_csv(std::string_view content, std::string_view source) {
  const text::CsvTable table = text::parse_csv(content, source);
  const std::size_t c_study = table.column("study_id", source);
  const std::size_t c_split = table.column("split", source);
  SplitAssignment a;
  for (const auto& row : table.rows) {
    const std::string id = text::trim(row[c_study]);
    if (a.find(id)) throw ValidationError("study " + id + " assigned twice in " + std::string(source));
    a.assign(id, parse_split(row[c_split]));
  }
  a.requested = a.realized();
  return a;
}

SplitAssignment SplitAssignment::read(const std::filesystem::path& path) {
  return from_csv(text::read_file(path), path.string());
}

std::vector<const CohortRecord*> SplitAssignment::records_in(const CohortManifest& manifest,
                                                             Split split) const {
  std::vector<const CohortRecord*> out;
  for (const auto& r : manifest.records()) {
    auto s = find(r.study_id);
    if (s && *s == split) out.push_back(&r);
  }
  return out;
}

SplitAssignment split_cohort(const CohortManifest& manifest, const SplitFractions& fractions,
                             std::uint64_t seed) {
  fractions.validate();

  struct PatientGroup {
    std::string patient_id;
    std::vector<std::size_t> studies;
  };
  std::vector<PatientGroup> patients;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& pid = manifest.records()[i].patient_id;
    auto [it, inserted] = index.emplace(pid, patients.size());
    if (inserted) patients.push_back({pid, {}});
    patients[it->second].studies.push_back(i);
  }

  const auto targets = fractions.as_array();
  const auto active = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](double f) { return f > 0.0; }));
  if (patients.size() < active) {
    throw ValidationError(fmt::format("{} distinct patients cannot fill {} non-empty splits",
                                      patients.size(), active));
  }

  RngStream rng = RngStream::derive(seed, "split_cohort");
  for (std::size_t i = patients.size(); i > 1; --i) {
    std::swap(patients[i - 1], patients[rng.below(i)]);
  }
  std::stable_sort(patients.begin(), patients.end(), [](const PatientGroup& a, const PatientGroup& b) {
    return a.studies.size() > b.studies.size();
  });

  const double total = static_cast<double>(manifest.size());
  std::array<double, 3> filled{0, 0, 0};
  constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Val, Split::Test};

  SplitAssignment out;
  out.requested = fractions;
  out.seed = seed;
  for (const auto& p : patients) {
    std::size_t best = 3;
    double best_deficit = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (targets[s] <= 0.0) continue;
      const double deficit = targets[s] * total - filled[s];
      if (best == 3 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    filled[best] += static_cast<double>(p.studies.size());
    for (std::size_t idx : p.studies) out.assign(manifest.records()[idx].study_id, kSplits[best]);
  }
  return out;
}

std::string LeakageReport::to_json() const {
  nlohmann::ordered_json j;
  j["clean"] = clean();
  j["crossing_patients"] = crossing_patients;
  j["crossing_image_refs"] = crossing_image_refs;
  return j.dump(2) + "\n";
}

LeakageReport check_leakage(const SplitAssignment& assignment, const CohortManifest& manifest) {
  std::map<std::string, std::set<Split>> by_patient;
  std::map<std::string, std::set<Split>> by_ref;
  for (const auto& [study_id, split] : assignment.assignment()) {
    const CohortRecord* r = manifest.find(study_id);
    if (!r) throw ValidationError("study " + study_id + " is in the split but not in the manifest");
    by_patient[r->patient_id].insert(split);
    if (!r->image_ref.empty()) by_ref[r->image_ref].insert(split);
  }
  for (const auto& r : manifest.records()) {
    if (!assignment.find(r.study_id)) {
      throw ValidationError("study " + r.study_id + " is in the manifest but has no split");
    }
  }
  LeakageReport report;
  for (const auto& [pid, splits] : by_patient) {
    if (splits.size() > 1) report.crossing_patients.push_back(pid);
  }
  for (const auto& [ref, splits] : by_ref) {
    if (splits.size() > 1) report.crossing_image_refs.push_back(ref);
  }
  return report;
}

}  // namespace efcxr::cohort
