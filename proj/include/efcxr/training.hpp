#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efcxr/cohort.hpp"
#include "efcxr/evaluation.hpp"
#include "efcxr/imaging.hpp"
#include "efcxr/models.hpp"

namespace efcxr::training {

// Scheduler --------------------------------------------------------------------

struct SchedulerState {
  double best_monitor_value = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double current_lr = 0.001;
};

struct PlateauRule {
  int patience = 5;
  double factor = 0.1;
  /// A value counts as an improvement only when below best - tolerance.
  double tolerance = 1e-6;
};

/// One reduce-on-plateau step on the epoch's validation loss. Throws
/// NumericError for a non-finite value.
SchedulerState lr_schedule_step(const SchedulerState& state, double monitor_value,
                                const PlateauRule& rule = {});

// Configuration ----------------------------------------------------------------

struct TrainConfig {
  double initial_lr = 0.001;
  int plateau_patience = 5;
  double lr_factor = 0.1;
  int max_epochs = 50;
  int batch_size = 32;
  imaging::AugmentationPolicy augmentation;
  std::uint64_t seed = 0;

  /// Adam constants; recorded in run metadata, not configurable.
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  PlateauRule rule() const { return {plateau_patience, lr_factor, 1e-6}; }
  void validate() const;
};

/// Seeds every random source of a run derives from.
std::uint64_t init_seed_for(std::uint64_t seed);

// Data -------------------------------------------------------------------------

/// Produces the normalised input image of a record.
using ImageLoader = std::function<imaging::Image(const cohort::CohortRecord&)>;

/// Loads `image_root / image_ref` (absolute refs are used as is) at the model
/// input size and channel count.
ImageLoader disk_loader(std::filesystem::path image_root, imaging::Size size, int channels);

/// Wraps `inner` with an in-memory cache keyed by study_id.
ImageLoader caching_loader(ImageLoader inner);

// Epochs -----------------------------------------------------------------------

struct EpochEvaluation {
  double mean_loss = 0;
  double accuracy = 0;
  std::vector<evaluation::PredictionRecord> predictions;
};

/// Binary cross-entropy of a logit against a label, computed stably.
double bce_with_logit(double logit, Label truth);

/// Runs the model without augmentation over `records`. Throws ValidationError
/// for an empty subset; decode errors propagate with the offending ref.
EpochEvaluation evaluate_epoch(models::Classifier& model,
                               const std::vector<const cohort::CohortRecord*>& records,
                               const ImageLoader& loader, int batch_size = 32);

EpochEvaluation evaluate_epoch(models::Classifier& model,
                               const std::vector<const cohort::CohortRecord*>& records,
                               const std::filesystem::path& image_root, int batch_size = 32);

// Training ---------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  /// Learning rate used during the epoch.
  double lr = 0;
  double wall_seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;

  /// CSV `epoch,train_loss,val_loss,val_acc,lr`. Wall time is left out so the
  /// file is reproducible.
  std::string to_csv() const;
  static TrainHistory from_csv(std::string_view content, std::string_view source = {});
};

struct TrainResult {
  TrainHistory history;
  /// Unset when no epoch ran.
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<std::filesystem::path> last_checkpoint;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
  /// Written after every epoch: history.csv, last.ckpt, and best.ckpt when
  /// validation loss improves. Empty means nothing is written.
  std::filesystem::path run_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam on binary cross-entropy, with reduce-on-plateau on validation loss.
/// Data order, per-sample augmentation and dropout are all keyed on
/// config.seed. The model is left holding the last epoch's weights, in
/// evaluation mode. Throws ValidationError for an empty Train or Val split
/// and NumericError (naming epoch and batch) for a non-finite loss.
TrainResult train(models::Model& model, const cohort::CohortManifest& manifest,
                  const cohort::SplitAssignment& split, const TrainConfig& config,
                  const ImageLoader& loader, const TrainOptions& options = {});

}  // namespace efcxr::training
