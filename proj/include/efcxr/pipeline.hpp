#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "efcxr/run_config.hpp"

namespace efcxr::pipeline {

/// Fixed file names inside a run directory.
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path run_manifest() const { return dir / "run_manifest.json"; }
  std::filesystem::path manifest() const { return dir / "manifest.csv"; }
  std::filesystem::path demographics_json() const { return dir / "demographics.json"; }
  std::filesystem::path demographics_txt() const { return dir / "demographics.txt"; }
  std::filesystem::path cohort_build() const { return dir / "cohort_build.json"; }
  std::filesystem::path split() const { return dir / "split.csv"; }
  std::filesystem::path leakage() const { return dir / "leakage.json"; }
  std::filesystem::path history() const { return dir / "history.csv"; }
  std::filesystem::path best_checkpoint() const { return dir / "best.ckpt"; }
  std::filesystem::path last_checkpoint() const { return dir / "last.ckpt"; }
  std::filesystem::path predictions() const { return dir / "predictions.csv"; }
  std::filesystem::path metrics_json() const { return dir / "metrics.json"; }
  std::filesystem::path metrics_txt() const { return dir / "metrics.txt"; }
  std::filesystem::path figures() const { return dir / "figures"; }
  std::filesystem::path selection() const { return dir / "figures" / "selection.csv"; }
  /// Written when `stage` throws; removed when it next starts.
  std::filesystem::path failure_marker(const std::string& stage) const { return dir / ("FAILED." + stage); }
};

RunPaths run_paths(const run::RunConfig& config);

/// Exclusive claim on a run directory through a `.lock` file holding the
/// owner's pid. A lock left by a process that no longer exists is taken
/// over; a live one raises Error.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Progress messages go to this sink (stderr by default).
void set_log_sink(void (*sink)(const std::string&));

/// Each command validates the config, takes the run lock, records itself in
/// run_manifest.json and then writes its outputs. All return the run
/// directory.
std::filesystem::path cohort_build(const run::RunConfig& config);
/// Throws Error when the leakage report is not clean.
std::filesystem::path split(const run::RunConfig& config);
std::filesystem::path train(const run::RunConfig& config);
std::filesystem::path evaluate(const run::RunConfig& config,
                               const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
std::filesystem::path explain(const run::RunConfig& config,
                              const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                              const std::optional<std::filesystem::path>& predictions = std::nullopt);
/// cohort_build, split, train, evaluate and explain in sequence.
std::filesystem::path run_all(const run::RunConfig& config);

/// Parameter table of all four backbones, flagging departures from the
/// published counts.
std::string parameter_report();

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace efcxr::pipeline
