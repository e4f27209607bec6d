#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace efcxr {

/// Base class for every error raised by the library. Command-line front ends
/// map ValidationError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, configuration or input schema. Raised before any work
/// with side effects is started whenever possible.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A tabular input is missing a column or carries an unparseable field.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// An image file could not be read or decoded.
class DecodeError : public Error {
 public:
  DecodeError(std::string ref, const std::string& what)
      : Error(what + " (" + ref + ")"), ref_(std::move(ref)) {}
  const std::string& ref() const noexcept { return ref_; }

 private:
  std::string ref_;
};

/// Non-finite values showed up in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class Label { ReducedEF, PreservedEF };

enum class Sex { Male, Female, Unknown };

// The first ten entries mirror the cohort's race/ethnicity table; Missing is
// the nullable state for rows without any recorded value.
enum class RaceEthnicity {
  AmericanIndianAlaskaNative,
  Asian,
  Black,
  HispanicLatino,
  Other,
  Unknown,
  UnableToObtain,
  MultipleRaceEthnicity,
  DeclinedToAnswer,
  WhiteCaucasian,
  Missing,
};

inline constexpr std::array<RaceEthnicity, 11> kAllRaces = {
    RaceEthnicity::AmericanIndianAlaskaNative,
    RaceEthnicity::Asian,
    RaceEthnicity::Black,
    RaceEthnicity::HispanicLatino,
    RaceEthnicity::Other,
    RaceEthnicity::Unknown,
    RaceEthnicity::UnableToObtain,
    RaceEthnicity::MultipleRaceEthnicity,
    RaceEthnicity::DeclinedToAnswer,
    RaceEthnicity::WhiteCaucasian,
    RaceEthnicity::Missing,
};

inline constexpr std::array<Sex, 3> kAllSexes = {Sex::Male, Sex::Female, Sex::Unknown};

/// Manifest spelling: "reduced" / "preserved".
std::string_view to_string(Label label);
/// Display name, e.g. "Reduced EF".
std::string_view display_name(Label label);
Label parse_label(std::string_view text);

/// Manifest spelling: "Male", "Female", "" for unknown.
std::string_view to_string(Sex sex);
Sex parse_sex(std::string_view text);

/// Canonical category name; empty for Missing.
std::string_view to_string(RaceEthnicity race);

/// Maps a free-form source string (canonical names, MIMIC-style upper-case
/// spellings such as "BLACK/AFRICAN AMERICAN" or "ASIAN - CHINESE") onto a
/// category. Unrecognised non-empty strings map to Other and set
/// `recognised` to false.
RaceEthnicity parse_race(std::string_view text, bool* recognised = nullptr);

inline Label other(Label label) {
  return label == Label::ReducedEF ? Label::PreservedEF : Label::ReducedEF;
}

}  // namespace efcxr
