#include "efcxr/types.hpp"

#include <algorithm>
#include <cctype>

#include "efcxr/text.hpp"

namespace efcxr {

std::string_view to_string(Label label) {
  return label == Label::ReducedEF ? "reduced" : "preserved";
}

std::string_view display_name(Label label) {
  return label == Label::ReducedEF ? "Reduced EF" : "Preserved EF";
}

Label parse_label(std::string_view text) {
  const std::string t = text::lower(text::trim(text));
  if (t == "reduced") return Label::ReducedEF;
  if (t == "preserved") return Label::PreservedEF;
  throw SchemaError("unrecognised label '" + std::string(text) +
                    "' (expected 'reduced' or 'preserved')");
}

std::string_view to_string(Sex sex) {
  switch (sex) {
    case Sex::Male: return "Male";
    case Sex::Female: return "Female";
    case Sex::Unknown: return "";
  }
  return "";
}

Sex parse_sex(std::string_view text) {
  const std::string t = text::lower(text::trim(text));
  if (t == "m" || t == "male") return Sex::Male;
  if (t == "f" || t == "female") return Sex::Female;
  return Sex::Unknown;
}

std::string_view to_string(RaceEthnicity race) {
  switch (race) {
    case RaceEthnicity::AmericanIndianAlaskaNative: return "American Indian/Alaska Native";
    case RaceEthnicity::Asian: return "Asian";
    case RaceEthnicity::Black: return "Black";
    case RaceEthnicity::HispanicLatino: return "Hispanic/Latino";
    case RaceEthnicity::Other: return "Other";
    case RaceEthnicity::Unknown: return "Unknown";
    case RaceEthnicity::UnableToObtain: return "Unable to Obtain";
    case RaceEthnicity::MultipleRaceEthnicity: return "Multiple Race/Ethnicity";
    case RaceEthnicity::DeclinedToAnswer: return "Declined to answer";
    case RaceEthnicity::WhiteCaucasian: return "White/Caucasian";
    case RaceEthnicity::Missing: return "";
  }
  return "";
}

RaceEthnicity parse_race(std::string_view text, bool* recognised) {
  if (recognised) *recognised = true;
  const std::string t = text::upper(text::trim(text));
  if (t.empty()) return RaceEthnicity::Missing;

  for (RaceEthnicity r : kAllRaces) {
    if (r != RaceEthnicity::Missing && t == text::upper(to_string(r))) return r;
  }

  auto starts = [&](std::string_view prefix) { return t.rfind(prefix, 0) == 0; };
  if (starts("WHITE")) return RaceEthnicity::WhiteCaucasian;
  if (starts("BLACK") || starts("AFRICAN AMERICAN")) return RaceEthnicity::Black;
  if (starts("HISPANIC") || starts("LATINO")) return RaceEthnicity::HispanicLatino;
  if (starts("ASIAN")) return RaceEthnicity::Asian;
  if (starts("AMERICAN INDIAN")) return RaceEthnicity::AmericanIndianAlaskaNative;
  if (starts("MULTIPLE")) return RaceEthnicity::MultipleRaceEthnicity;
  if (starts("UNABLE TO OBTAIN")) return RaceEthnicity::UnableToObtain;
  if (t.find("DECLINED") != std::string::npos) return RaceEthnicity::DeclinedToAnswer;
  if (starts("UNKNOWN")) return RaceEthnicity::Unknown;
  if (starts("OTHER")) return RaceEthnicity::Other;

  if (recognised) *recognised = false;
  return RaceEthnicity::Other;
}

}  // namespace efcxr
