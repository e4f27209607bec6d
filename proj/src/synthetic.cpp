// Synthetic stand-in for the access-restricted chest X-ray cohort: each image
// is a stylised chest with a bright central ellipse whose size is the
// class-dependent "cardiomegaly" cue.
#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/cohort.hpp"
#include "efcxr/imaging.hpp"
#include "efcxr/rng.hpp"

namespace efcxr::cohort {

namespace {

// Race weights follow the published cohort counts.
constexpr std::array<std::pair<RaceEthnicity, double>, 10> kRaceWeights = {{
    {RaceEthnicity::AmericanIndianAlaskaNative, 22},
    {RaceEthnicity::Asian, 100},
    {RaceEthnicity::Black, 680},
    {RaceEthnicity::HispanicLatino, 187},
    {RaceEthnicity::Other, 169},
    {RaceEthnicity::Unknown, 144},
    {RaceEthnicity::UnableToObtain, 20},
    {RaceEthnicity::MultipleRaceEthnicity, 11},
    {RaceEthnicity::DeclinedToAnswer, 41},
    {RaceEthnicity::WhiteCaucasian, 2095},
}};

constexpr double kFemaleFraction = 0.453;
constexpr double kPreservedRadius = 0.12;  // fraction of image side
constexpr double kReducedExtraRadius = 0.18;
constexpr double kRadiusJitter = 0.015;

RaceEthnicity draw_race(RngStream& rng) {
  double total = 0;
  for (const auto& [race, w] : kRaceWeights) total += w;
  double u = rng.uniform() * total;
  for (const auto& [race, w] : kRaceWeights) {
    if (u < w) return race;
    u -= w;
  }
  return RaceEthnicity::WhiteCaucasian;
}

int draw_study_count(RngStream& rng) {
  const double u = rng.uniform();
  if (u < 0.60) return 1;
  if (u < 0.85) return 2;
  if (u < 0.95) return 3;
  return 4 + static_cast<int>(rng.below(4));
}

bool inside_ellipse(double x, double y, double cx, double cy, double ax, double ay) {
  const double dx = (x - cx) / ax;
  const double dy = (y - cy) / ay;
  return dx * dx + dy * dy <= 1.0;
}

imaging::Image render_chest(int size, double heart_radius, double heart_intensity, double heart_dx,
                            double heart_dy, RngStream& rng) {
  imaging::Image img(size, size, 1);
  const double s = size;
  const double cx = 0.5 * s;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double v = 0.05;
      if (inside_ellipse(px, py, cx, 0.55 * s, 0.42 * s, 0.45 * s)) v = 0.30;
      if (inside_ellipse(px, py, cx - 0.17 * s, 0.50 * s, 0.12 * s, 0.28 * s) ||
          inside_ellipse(px, py, cx + 0.17 * s, 0.50 * s, 0.12 * s, 0.28 * s)) {
        v = 0.15;
      }
      if (inside_ellipse(px, py, cx + heart_dx, 0.58 * s + heart_dy, heart_radius,
                         0.8 * heart_radius)) {
        v = heart_intensity;
      }
      v += 0.03 * rng.normal();
      // Quantise as the PNG round trip will.
      img.at(y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  return img;
}

}  // namespace

std::string SyntheticTruth::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = options.n;
  j["class_signal"] = options.class_signal;
  j["seed"] = options.seed;
  j["image_size"] = options.image_size;
  j["race_counts"] = race_counts;
  j["sex_counts"] = sex_counts;
  j["label_counts"] = label_counts;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    arr.push_back({{"study_id", e.study_id},
                   {"label", to_string(e.label)},
                   {"heart_radius", e.heart_radius},
                   {"heart_intensity", e.heart_intensity}});
  }
  j["entries"] = arr;
  return j.dump(2) + "\n";
}

SyntheticCohort generate_synthetic_cohort(const SyntheticOptions& options,
                                          const std::filesystem::path& directory) {
  if (options.n < 10) {
    throw ValidationError(fmt::format("synthetic cohort needs n >= 10, got {}", options.n));
  }
  if (!(options.class_signal >= 0.0 && options.class_signal <= 1.0)) {
    throw ValidationError(
        fmt::format("class_signal must lie in [0, 1], got {}", options.class_signal));
  }
  if (options.image_size < 16) {
    throw ValidationError(fmt::format("synthetic image_size must be >= 16, got {}", options.image_size));
  }

  RngStream rng = RngStream::derive(options.seed, "synthetic_cohort");
  SyntheticCohort out;
  out.truth.options = options;
  std::vector<CohortRecord> records;
  const double s = options.image_size;

  int patient_index = 0;
  while (static_cast<int>(records.size()) < options.n) {
    ++patient_index;
    const int studies =
        std::min(draw_study_count(rng), options.n - static_cast<int>(records.size()));
    const Label label = rng.bernoulli(0.5) ? Label::ReducedEF : Label::PreservedEF;
    const Sex sex = rng.bernoulli(kFemaleFraction) ? Sex::Female : Sex::Male;
    const RaceEthnicity race = draw_race(rng);
    const int age = static_cast<int>(std::clamp(std::round(71.0 + 15.0 * rng.normal()), 18.0, 100.0));

    for (int k = 0; k < studies; ++k) {
      CohortRecord r;
      r.study_id = fmt::format("S{:05d}", records.size() + 1);
      r.patient_id = fmt::format("P{:05d}", patient_index);
      r.image_ref = "images/" + r.study_id + ".png";
      r.label = label;
      r.age = age;
      r.sex = sex;
      r.race_ethnicity = race;

      const double extra = label == Label::ReducedEF ? kReducedExtraRadius * options.class_signal : 0.0;
      const double radius = s * (kPreservedRadius + extra + rng.uniform(-kRadiusJitter, kRadiusJitter));
      const double intensity = rng.uniform(0.75, 0.85);
      const double dx = rng.uniform(-0.02, 0.02) * s;
      const double dy = rng.uniform(-0.02, 0.02) * s;
      const imaging::Image img = render_chest(options.image_size, radius, intensity, dx, dy, rng);
      imaging::save_png_u8(img, directory / r.image_ref);

      out.truth.entries.push_back({r.study_id, label, radius, intensity});
      ++out.truth.race_counts[std::string(to_string(race))];
      ++out.truth.sex_counts[std::string(to_string(sex))];
      ++out.truth.label_counts[std::string(to_string(label))];
      records.push_back(std::move(r));
    }
  }

  out.manifest = CohortManifest(
      std::move(records),
      fmt::format("synthetic n={} class_signal={} seed={} image_size={}", options.n,
                  options.class_signal, options.seed, options.image_size));
  text::write_file_atomic(directory / "synthetic_truth.json", out.truth.to_json());
  return out;
}

}  // namespace efcxr::cohort
