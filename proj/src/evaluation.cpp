#include "efcxr/evaluation.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/text.hpp"

namespace efcxr::evaluation {

namespace {

void require_non_empty(const std::vector<PredictionRecord>& preds, std::string_view what) {
  if (preds.empty()) throw ValidationError(std::string(what) + " needs at least one prediction");
}

double ratio(std::size_t num, std::size_t den, bool* undefined) {
  if (den == 0) {
    *undefined = true;
    return 0.0;
  }
  *undefined = false;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::string predictions_to_csv(const std::vector<PredictionRecord>& preds) {
  std::string out = "study_id,p_reduced,predicted,truth\n";
  for (const auto& p : preds) {
    out += text::csv_line({p.study_id, text::format_double(p.p_reduced),
                           std::string(to_string(p.predicted)), std::string(to_string(p.truth))});
  }
  return out;
}

std::vector<PredictionRecord> predictions_from_csv(std::string_view content, std::string_view source) {
  const text::CsvTable table = text::parse_csv(content, source);
  const std::size_t c_study = table.column("study_id", source);
  const std::size_t c_p = table.column("p_reduced", source);
  const std::size_t c_pred = table.column("predicted", source);
  const std::size_t c_truth = table.column("truth", source);
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    PredictionRecord r;
    r.study_id = text::trim(row[c_study]);
    try {
      r.p_reduced = std::stod(text::trim(row[c_p]));
    } catch (const std::exception&) {
      throw SchemaError(fmt::format("invalid p_reduced '{}' on row {} of {}", row[c_p], i + 2, source));
    }
    if (!(r.p_reduced >= 0.0 && r.p_reduced <= 1.0)) {
      throw SchemaError(fmt::format("p_reduced {} outside [0, 1] on row {} of {}", r.p_reduced, i + 2,
                                    source));
    }
    r.predicted = parse_label(row[c_pred]);
    r.truth = parse_label(row[c_truth]);
    if (r.predicted != predict_label(r.p_reduced)) {
      throw SchemaError(fmt::format("row {} of {}: predicted label disagrees with p_reduced {}", i + 2,
                                    source, r.p_reduced));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("predictions file not found: " + path.string());
  return predictions_from_csv(text::read_file(path), path.string());
}

ConfusionCounts confusion_counts(const std::vector<PredictionRecord>& preds) {
  require_non_empty(preds, "confusion_counts");
  ConfusionCounts c;
  for (const auto& p : preds) {
    const bool pred_pos = p.predicted == Label::ReducedEF;
    const bool true_pos = p.truth == Label::ReducedEF;
    if (pred_pos && true_pos) ++c.tp;
    else if (pred_pos) ++c.fp;
    else if (true_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(double precision, double recall) {
  const double sum = precision + recall;
  return sum == 0.0 ? 0.0 : 2.0 * precision * recall / sum;
}

MetricsReport classification_report(const ConfusionCounts& c) {
  if (c.total() == 0) throw ValidationError("classification_report needs at least one prediction");
  MetricsReport r;
  r.counts = c;
  r.total = c.total();

  r.reduced.precision = ratio(c.tp, c.tp + c.fp, &r.reduced.precision_undefined);
  r.reduced.recall = ratio(c.tp, c.tp + c.fn, &r.reduced.recall_undefined);
  r.reduced.f1 = f1_score(r.reduced.precision, r.reduced.recall);
  r.reduced.support = c.tp + c.fn;

  r.preserved.precision = ratio(c.tn, c.tn + c.fn, &r.preserved.precision_undefined);
  r.preserved.recall = ratio(c.tn, c.tn + c.fp, &r.preserved.recall_undefined);
  r.preserved.f1 = f1_score(r.preserved.precision, r.preserved.recall);
  r.preserved.support = c.tn + c.fp;

  r.accuracy = static_cast<double>(c.correct()) / static_cast<double>(c.total());
  r.misclassification_rate = 1.0 - r.accuracy;
  return r;
}

MetricsReport classification_report(const std::vector<PredictionRecord>& preds) {
  require_non_empty(preds, "classification_report");
  return classification_report(confusion_counts(preds));
}

double misclassification_rate(const std::vector<PredictionRecord>& preds) {
  return classification_report(preds).misclassification_rate;
}

ConfidenceBuckets confidence_buckets(const std::vector<PredictionRecord>& preds, double hi_threshold,
                                     double lo_threshold) {
  if (!(0.0 < lo_threshold && lo_threshold < hi_threshold && hi_threshold < 1.0)) {
    throw ValidationError(fmt::format(
        "confidence thresholds must satisfy 0 < lo < hi < 1, got lo={} hi={}", lo_threshold,
        hi_threshold));
  }
  ConfidenceBuckets b;
  b.hi_threshold = hi_threshold;
  b.lo_threshold = lo_threshold;
  auto put = [&](BucketCounts& bc, double p) {
    if (p > hi_threshold) ++bc.hi;
    else if (p < lo_threshold) ++bc.lo;
    else ++bc.mid;
  };
  for (const auto& p : preds) {
    put(b.all, p.p_reduced);
    if (!p.correct()) put(b.misclassified, p.p_reduced);
  }
  return b;
}

std::string_view to_string(Facet facet) { return facet == Facet::Race ? "race" : "sex"; }

Facet parse_facet(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "race" || s == "race_ethnicity") return Facet::Race;
  if (s == "sex" || s == "gender") return Facet::Sex;
  throw ValidationError("unknown subgroup facet '" + std::string(t) + "' (expected race or sex)");
}

SubgroupReport subgroup_report(const std::vector<PredictionRecord>& preds,
                               const cohort::CohortManifest& manifest, Facet facet,
                               std::size_t min_support) {
  std::map<std::string, std::vector<PredictionRecord>> grouped;
  for (const auto& p : preds) {
    const cohort::CohortRecord* r = manifest.find(p.study_id);
    if (!r) throw ValidationError("prediction for study " + p.study_id + " has no manifest record");
    std::string key;
    if (facet == Facet::Race) {
      if (r->race_ethnicity == RaceEthnicity::Missing) continue;
      key = std::string(to_string(r->race_ethnicity));
    } else {
      if (r->sex == Sex::Unknown) continue;
      key = std::string(to_string(r->sex));
    }
    grouped[key].push_back(p);
  }
  SubgroupReport report;
  report.facet = facet;
  report.min_support = min_support;
  for (auto& [key, group] : grouped) {
    GroupReport g;
    g.metrics = classification_report(group);
    g.low_support = group.size() < min_support;
    report.groups.emplace(key, g);
  }
  return report;
}

std::string format_percent(double fraction) { return fmt::format("{:.1f}%", 100.0 * fraction); }

namespace {

std::string class_rows(const std::string& title, const MetricsReport& r) {
  std::string out;
  const auto row = [&](const std::string& first, Label label) {
    const ClassMetrics& m = r.of(label);
    auto cell = [](double v, bool undefined) {
      return undefined ? fmt::format("{:.2f}*", v) : fmt::format("{:.2f}", v);
    };
    out += fmt::format("| {:<24} | {:<12} | {:>9} | {:>9} | {:>9} | {:>7} |\n", first,
                       display_name(label), cell(m.precision, m.precision_undefined),
                       cell(m.recall, m.recall_undefined), fmt::format("{:.2f}", m.f1), m.support);
  };
  row(title, Label::ReducedEF);
  row("", Label::PreservedEF);
  return out;
}

std::string table_rule() {
  return fmt::format("+{:-<26}+{:-<14}+{:-<11}+{:-<11}+{:-<11}+{:-<9}+\n", "", "", "", "", "", "");
}

std::string table_header(std::string_view first) {
  return table_rule() +
         fmt::format("| {:<24} | {:<12} | {:>9} | {:>9} | {:>9} | {:>7} |\n", first, "Class",
                     "Precision", "Recall", "F1-score", "Support") +
         table_rule();
}

nlohmann::ordered_json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"support", m.support},
          {"precision_undefined", m.precision_undefined},
          {"recall_undefined", m.recall_undefined}};
}

nlohmann::ordered_json report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["per_class"] = {{"reduced", class_json(r.reduced)}, {"preserved", class_json(r.preserved)}};
  j["overall"] = {{"accuracy", r.accuracy},
                  {"misclassification_rate", r.misclassification_rate},
                  {"total", r.total},
                  {"correct", r.counts.correct()},
                  {"misclassified", r.counts.errors()},
                  {"tp", r.counts.tp},
                  {"fp", r.counts.fp},
                  {"fn", r.counts.fn},
                  {"tn", r.counts.tn}};
  return j;
}

nlohmann::ordered_json bucket_json(const BucketCounts& b) {
  return {{"hi", b.hi}, {"lo", b.lo}, {"mid", b.mid}};
}

}  // namespace

std::string render_metrics_table(const std::string& title, const MetricsReport& report) {
  std::string out = table_header("Model");
  out += class_rows(title, report);
  out += table_rule();
  out += fmt::format("Accuracy {:.4f}, misclassification rate {} ({} of {})\n", report.accuracy,
                     format_percent(report.misclassification_rate), report.counts.errors(),
                     report.total);
  if (report.reduced.precision_undefined || report.reduced.recall_undefined ||
      report.preserved.precision_undefined || report.preserved.recall_undefined) {
    out += "* undefined: zero denominator, reported as 0\n";
  }
  return out;
}

std::string render_buckets(const ConfidenceBuckets& b, const ConfusionCounts& counts) {
  return fmt::format(
      "Of the total {} samples, {} were correctly classified and {} misclassified.\n"
      "p_reduced > {:g}: {} overall, {} misclassified\n"
      "p_reduced < {:g}: {} overall, {} misclassified\n"
      "otherwise:       {} overall, {} misclassified\n",
      counts.total(), counts.correct(), counts.errors(), b.hi_threshold, b.all.hi,
      b.misclassified.hi, b.lo_threshold, b.all.lo, b.misclassified.lo, b.all.mid,
      b.misclassified.mid);
}

std::string render_subgroups(const SubgroupReport& report) {
  std::string out = table_header(report.facet == Facet::Race ? "Race" : "Sex");
  for (const auto& [key, g] : report.groups) {
    out += class_rows(g.low_support ? key + " (low support)" : key, g.metrics);
    out += table_rule();
  }
  return out;
}

std::string metrics_json(const MetricsReport& report, const ConfidenceBuckets& buckets,
                         const std::vector<SubgroupReport>& subgroups) {
  nlohmann::ordered_json j = report_json(report);
  j["buckets"] = {{"hi_threshold", buckets.hi_threshold},
                  {"lo_threshold", buckets.lo_threshold},
                  {"all", bucket_json(buckets.all)},
                  {"misclassified", bucket_json(buckets.misclassified)}};
  nlohmann::ordered_json subs = nlohmann::ordered_json::object();
  for (const auto& s : subgroups) {
    nlohmann::ordered_json groups = nlohmann::ordered_json::object();
    for (const auto& [key, g] : s.groups) {
      nlohmann::ordered_json gj = report_json(g.metrics);
      gj["low_support"] = g.low_support;
      groups[key] = gj;
    }
    subs[std::string(to_string(s.facet))] = {{"min_support", s.min_support}, {"groups", groups}};
  }
  j["subgroups"] = subs;
  return j.dump(2) + "\n";
}

}  // namespace efcxr::evaluation
