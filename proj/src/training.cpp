#include "efcxr/training.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include <fmt/format.h>

#include "efcxr/rng.hpp"
#include "efcxr/text.hpp"
#include "models_torch.hpp"

namespace efcxr::training {

using cohort::CohortRecord;
using cohort::Split;
using imaging::Image;

SchedulerState lr_schedule_step(const SchedulerState& state, double value, const PlateauRule& rule) {
  if (!std::isfinite(value)) {
    throw NumericError(fmt::format("scheduler monitor value is not finite ({})", value));
  }
  SchedulerState next = state;
  if (value < state.best_monitor_value - rule.tolerance) {
    next.best_monitor_value = value;
    next.epochs_since_improvement = 0;
    return next;
  }
  if (++next.epochs_since_improvement >= rule.patience) {
    next.current_lr *= rule.factor;
    next.epochs_since_improvement = 0;
  }
  return next;
}

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) {
    throw ValidationError(fmt::format("initial_lr must be positive, got {}", initial_lr));
  }
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) {
    throw ValidationError(fmt::format("lr_factor must lie in (0, 1), got {}", lr_factor));
  }
  if (plateau_patience < 1) throw ValidationError("plateau_patience must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_epochs < 0) throw ValidationError("max_epochs must be >= 0");
  augmentation.validate();
}

std::uint64_t init_seed_for(std::uint64_t seed) { return RngStream::derive(seed, "init").next_u64(); }

ImageLoader disk_loader(std::filesystem::path image_root, imaging::Size size, int channels) {
  return [root = std::move(image_root), size, channels](const CohortRecord& r) {
    const std::filesystem::path ref(r.image_ref);
    return imaging::load_and_normalize(ref.is_absolute() ? ref : root / ref, size, channels);
  };
}

ImageLoader caching_loader(ImageLoader inner) {
  auto cache = std::make_shared<std::map<std::string, Image>>();
  return [inner = std::move(inner), cache](const CohortRecord& r) {
    auto it = cache->find(r.study_id);
    if (it == cache->end()) it = cache->emplace(r.study_id, inner(r)).first;
    return it->second;
  };
}

double bce_with_logit(double z, Label truth) {
  const double y = truth == Label::ReducedEF ? 1.0 : 0.0;
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

EpochEvaluation evaluate_epoch(models::Classifier& model, const std::vector<const CohortRecord*>& records,
                               const ImageLoader& loader, int batch_size) {
  if (records.empty()) throw ValidationError("evaluate_epoch needs at least one record");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  EpochEvaluation out;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
    const std::size_t end = std::min(records.size(), begin + batch_size);
    std::vector<Image> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(loader(*records[i]));
    const std::vector<double> z = model.logits(batch);
    for (std::size_t i = begin; i < end; ++i) {
      const CohortRecord& r = *records[i];
      const double logit = z[i - begin];
      loss_sum += bce_with_logit(logit, r.label);
      auto p = evaluation::PredictionRecord::make(r.study_id, models::sigmoid(logit), r.label);
      correct += p.correct();
      out.predictions.push_back(std::move(p));
    }
  }
  out.mean_loss = loss_sum / static_cast<double>(records.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  return out;
}

EpochEvaluation evaluate_epoch(models::Classifier& model, const std::vector<const CohortRecord*>& records,
                               const std::filesystem::path& image_root, int batch_size) {
  const ImageLoader loader =
      disk_loader(image_root, {model.input_height(), model.input_width()}, model.input_channels());
  return evaluate_epoch(model, records, loader, batch_size);
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr\n";
  for (const auto& e : epochs) {
    out += text::csv_line({std::to_string(e.epoch), text::format_double(e.train_loss),
                           text::format_double(e.val_loss), text::format_double(e.val_acc),
                           text::format_double(e.lr)});
  }
  return out;
}

TrainHistory TrainHistory::from_csv(std::string_view content, std::string_view source) {
  const text::CsvTable t = text::parse_csv(content, source);
  const std::size_t c_epoch = t.column("epoch", source), c_tl = t.column("train_loss", source),
                    c_vl = t.column("val_loss", source), c_va = t.column("val_acc", source),
                    c_lr = t.column("lr", source);
  TrainHistory h;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      h.epochs.push_back({std::stoi(row[c_epoch]), std::stod(row[c_tl]), std::stod(row[c_vl]),
                          std::stod(row[c_va]), std::stod(row[c_lr]), 0.0});
    } catch (const std::exception&) {
      throw SchemaError(fmt::format("unparseable number on row {} of {}", i + 2, source));
    }
  }
  return h;
}

namespace {

std::vector<const CohortRecord*> split_records(const cohort::CohortManifest& manifest,
                                               const cohort::SplitAssignment& split, Split which) {
  auto recs = split.records_in(manifest, which);
  if (recs.empty()) {
    throw ValidationError(fmt::format("the {} split is empty", cohort::to_string(which)));
  }
  return recs;
}

void shuffle(std::vector<std::size_t>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainResult train(models::Model& model, const cohort::CohortManifest& manifest,
                  const cohort::SplitAssignment& split, const TrainConfig& config,
                  const ImageLoader& loader, const TrainOptions& options) {
  config.validate();
  const auto train_recs = split_records(manifest, split, Split::Train);
  const auto val_recs = split_records(manifest, split, Split::Val);
  const auto t_start = std::chrono::steady_clock::now();

  auto& impl = model.impl();
  torch::manual_seed(RngStream::derive(config.seed, "torch").next_u64());
  torch::optim::Adam optimizer(
      impl.net->parameters(),
      torch::optim::AdamOptions(config.initial_lr)
          .betas({TrainConfig::kBeta1, TrainConfig::kBeta2})
          .eps(TrainConfig::kEpsilon));

  TrainResult result;
  SchedulerState sched;
  sched.current_lr = config.initial_lr;
  const PlateauRule rule = config.rule();
  const bool writing = !options.run_dir.empty();
  if (writing) {
    std::filesystem::create_directories(options.run_dir);
    text::write_file_atomic(options.run_dir / "history.csv", result.history.to_csv());
  }

  std::vector<std::size_t> order(train_recs.size());
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(sched.current_lr);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream order_rng = RngStream::derive(config.seed, "order", static_cast<std::uint64_t>(epoch));
    shuffle(order, order_rng);

    model.set_training(true);
    double loss_sum = 0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<Image> batch;
      std::vector<double> targets;
      for (std::size_t i = begin; i < end; ++i) {
        const CohortRecord& r = *train_recs[order[i]];
        Image img = loader(r);
        if (config.augmentation.any_enabled()) {
          RngStream rng = RngStream::derive(config.seed, "augment/" + r.study_id,
                                            static_cast<std::uint64_t>(epoch));
          img = imaging::apply_policy(img, config.augmentation, rng);
        }
        batch.push_back(std::move(img));
        targets.push_back(r.label == Label::ReducedEF ? 1.0 : 0.0);
      }
      torch::Tensor x = impl.to_tensor(std::span<const Image>(batch));
      torch::Tensor y = torch::tensor(targets, torch::kFloat64).to(impl.dtype);
      optimizer.zero_grad();
      torch::Tensor loss = torch::binary_cross_entropy_with_logits(impl.net->forward(x).view({-1}), y);
      const double lv = loss.item<double>();
      if (!std::isfinite(lv)) {
        throw NumericError(fmt::format("non-finite training loss at epoch {}, batch {}", epoch, batch_index));
      }
      loss.backward();
      optimizer.step();
      loss_sum += lv * static_cast<double>(end - begin);
    }

    model.set_training(false);
    const EpochEvaluation val = evaluate_epoch(model, val_recs, loader, config.batch_size);
    if (!std::isfinite(val.mean_loss)) {
      throw NumericError(fmt::format("non-finite validation loss at epoch {}", epoch));
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_recs.size()), val.mean_loss, val.accuracy,
                    sched.current_lr, seconds_since(t_epoch)};
    result.history.epochs.push_back(rec);

    const bool improved = val.mean_loss < result.best_val_loss;
    if (improved) {
      result.best_val_loss = val.mean_loss;
      result.best_epoch = epoch;
    }
    sched = lr_schedule_step(sched, val.mean_loss, rule);

    if (writing) {
      const nlohmann::json state = {{"epoch", epoch},
                                    {"train_loss", rec.train_loss},
                                    {"val_loss", rec.val_loss},
                                    {"val_acc", rec.val_acc},
                                    {"lr", rec.lr},
                                    {"next_lr", sched.current_lr},
                                    {"best_epoch", result.best_epoch},
                                    {"seed", config.seed}};
      result.last_checkpoint = options.run_dir / "last.ckpt";
      models::save_checkpoint(model, *result.last_checkpoint, state);
      if (improved) {
        result.best_checkpoint = options.run_dir / "best.ckpt";
        models::save_checkpoint(model, *result.best_checkpoint, state);
      }
      text::write_file_atomic(options.run_dir / "history.csv", result.history.to_csv());
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  model.set_training(false);
  result.history.wall_seconds = seconds_since(t_start);
  return result;
}

}  // namespace efcxr::training
