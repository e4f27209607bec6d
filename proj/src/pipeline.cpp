#include "efcxr/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/text.hpp"

namespace efcxr::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using run::RunConfig;

namespace {

void stderr_sink(const std::string& line) { std::fputs((line + "\n").c_str(), stderr); }
void (*g_sink)(const std::string&) = stderr_sink;

template <typename... Args>
void log(fmt::format_string<Args...> f, Args&&... args) {
  g_sink(fmt::format(f, std::forward<Args>(args)...));
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Run directories this process currently holds, so run_all can call the
// individual stages without deadlocking on its own lock.
std::set<fs::path>& held_locks() {
  static std::set<fs::path> held;
  return held;
}

bool process_alive(long pid) { return pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM); }

}  // namespace

void set_log_sink(void (*sink)(const std::string&)) { g_sink = sink ? sink : stderr_sink; }

RunPaths run_paths(const RunConfig& config) { return {run::resolve_output_root(config) / config.run_id}; }

RunLock::RunLock(const fs::path& run_dir) {
  const fs::path canonical = fs::weakly_canonical(run_dir);
  if (held_locks().count(canonical)) return;
  fs::create_directories(run_dir);
  const fs::path lock = run_dir / ".lock";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      path_ = lock;
      held_locks().insert(canonical);
      return;
    }
    if (errno != EEXIST) throw Error(fmt::format("cannot create lock file {}", lock.string()));
    long owner = 0;
    try {
      owner = std::stol(text::trim(text::read_file(lock)));
    } catch (const std::exception&) {
      owner = 0;
    }
    if (process_alive(owner)) {
      throw Error(fmt::format("run directory {} is in use by process {} (lock file {})", run_dir.string(),
                              owner, lock.string()));
    }
    fs::remove(lock);  // stale
  }
  throw Error("could not acquire " + lock.string());
}

RunLock::~RunLock() {
  if (path_.empty()) return;
  std::error_code ec;
  held_locks().erase(fs::weakly_canonical(path_.parent_path(), ec));
  fs::remove(path_, ec);
}

namespace {

ordered_json read_run_manifest(const RunPaths& paths) {
  if (!fs::exists(paths.run_manifest())) return ordered_json::object();
  try {
    return ordered_json::parse(text::read_file(paths.run_manifest()));
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("corrupt run manifest: " + paths.run_manifest().string());
  }
}

ordered_json digests(const std::vector<fs::path>& files) {
  ordered_json j = ordered_json::object();
  for (const auto& f : files) {
    if (fs::exists(f)) j[f.filename().string()] = text::sha256_file(f);
  }
  return j;
}

// Records the resolved config and the stage in run_manifest.json before the
// stage writes anything, runs it, then stamps the outcome.
template <typename F>
void stage(const RunConfig& config, const std::string& name, const std::vector<fs::path>& inputs, F&& body) {
  config.validate();
  const RunPaths paths = run_paths(config);
  RunLock lock(paths.dir);
  const ordered_json cfg = config.to_json();
  text::write_file_atomic(paths.config(), cfg.dump(2) + "\n");

  ordered_json m = read_run_manifest(paths);
  if (!m.contains("created_at")) m["created_at"] = utc_now();
  m["tool_version"] = kToolVersion;
  m["run_id"] = config.run_id;
  m["config"] = cfg;
  m["seeds"] = {{"split", config.split_seed},
                {"train", config.train.seed},
                {"init", config.model.init_seed},
                {"synthetic", config.cohort.synthetic ? ordered_json(config.cohort.synthetic->seed) : ordered_json()}};
  m["optimizer"] = {{"name", "adam"},
                    {"beta1", training::TrainConfig::kBeta1},
                    {"beta2", training::TrainConfig::kBeta2},
                    {"epsilon", training::TrainConfig::kEpsilon}};
  if (!m.contains("stages")) m["stages"] = ordered_json::object();
  m["stages"][name] = {{"started_at", utc_now()}, {"status", "running"}, {"inputs", digests(inputs)}};
  text::write_file_atomic(paths.run_manifest(), m.dump(2) + "\n");

  const fs::path marker = paths.failure_marker(name);
  fs::remove(marker);
  try {
    body(paths);
  } catch (const std::exception& e) {
    text::write_file_atomic(marker, fmt::format("stage {} failed at {}: {}\nOutputs of this stage may be partial.\n",
                                                name, utc_now(), e.what()));
    m["stages"][name]["status"] = "failed";
    m["stages"][name]["error"] = e.what();
    m["stages"][name]["finished_at"] = utc_now();
    text::write_file_atomic(paths.run_manifest(), m.dump(2) + "\n");
    throw;
  }
  m["stages"][name]["status"] = "ok";
  m["stages"][name]["finished_at"] = utc_now();
  text::write_file_atomic(paths.run_manifest(), m.dump(2) + "\n");
}

fs::path image_root(const RunConfig& config, const RunPaths& paths) {
  if (!config.cohort.image_root.empty()) return config.cohort.image_root;
  if (config.cohort.synthetic) return paths.dir;
  return config.cohort.metadata.parent_path();
}

cohort::CohortManifest load_manifest(const RunPaths& paths) {
  if (!fs::exists(paths.manifest())) {
    throw ValidationError("no cohort manifest at " + paths.manifest().string() + "; run cohort-build first");
  }
  return cohort::CohortManifest::read(paths.manifest());
}

cohort::SplitAssignment load_split(const RunPaths& paths) {
  if (!fs::exists(paths.split())) {
    throw ValidationError("no split file at " + paths.split().string() + "; run split first");
  }
  return cohort::SplitAssignment::read(paths.split());
}

fs::path require_checkpoint(const RunPaths& paths, const std::optional<fs::path>& checkpoint) {
  const fs::path p = checkpoint.value_or(paths.best_checkpoint());
  if (!fs::exists(p)) throw ValidationError("checkpoint not found: " + p.string());
  return p;
}

training::ImageLoader make_loader(const RunConfig& config, const RunPaths& paths, const models::ModelConfig& model,
                                  std::size_t count) {
  auto loader = training::disk_loader(image_root(config, paths), {model.input_height, model.input_width},
                                      model.input_channels());
  constexpr double kCacheBudgetBytes = 2.0 * 1024 * 1024 * 1024;
  const double bytes = static_cast<double>(count) * model.input_height * model.input_width *
                       model.input_channels() * sizeof(double);
  return bytes <= kCacheBudgetBytes ? training::caching_loader(std::move(loader)) : loader;
}

void do_cohort_build(const RunConfig& config) {
  std::vector<fs::path> inputs;
  if (!config.cohort.synthetic) inputs = {config.cohort.metadata, config.cohort.icd_map};
  stage(config, "cohort-build", inputs, [&](const RunPaths& paths) {
    ordered_json summary;
    cohort::CohortManifest manifest;
    if (config.cohort.synthetic) {
      auto syn = cohort::generate_synthetic_cohort(*config.cohort.synthetic, paths.dir);
      manifest = std::move(syn.manifest);
      summary["source"] = "synthetic";
      summary["conflicts"] = 0;
      summary["unmatched"] = 0;
    } else {
      if (!fs::exists(config.cohort.icd_map)) {
        throw ValidationError("ICD map file not found: " + config.cohort.icd_map.string());
      }
      if (!fs::exists(config.cohort.metadata)) {
        throw ValidationError("metadata file not found: " + config.cohort.metadata.string());
      }
      const auto icd = cohort::IcdLabelMap::read(config.cohort.icd_map);
      auto built = cohort::build_cohort(text::read_csv(config.cohort.metadata), icd,
                                        config.cohort.metadata.string());
      for (const auto& w : built.warnings) log("warning: {}", w);
      summary["source"] = config.cohort.metadata.string();
      summary["conflicts"] = built.conflict_count;
      summary["conflict_study_ids"] = built.conflict_study_ids;
      summary["unmatched"] = built.unmatched_count;
      summary["warnings"] = built.warnings;
      manifest = std::move(built.manifest);
    }
    summary["records"] = manifest.size();
    summary["reduced"] = manifest.count(Label::ReducedEF);
    summary["preserved"] = manifest.count(Label::PreservedEF);
    manifest.write(paths.manifest());
    const auto demo = cohort::summarize_demographics(manifest);
    text::write_file_atomic(paths.demographics_json(), cohort::demographics_json(demo));
    const std::string table = cohort::render_demographics(demo);
    text::write_file_atomic(paths.demographics_txt(), table);
    text::write_file_atomic(paths.cohort_build(), summary.dump(2) + "\n");
    log("cohort: {} records ({} reduced, {} preserved), {} conflicting studies excluded", manifest.size(),
        manifest.count(Label::ReducedEF), manifest.count(Label::PreservedEF), summary["conflicts"].get<std::size_t>());
    std::fputs(table.c_str(), stdout);
  });
}

void do_split(const RunConfig& config) {
  const RunPaths p = run_paths(config);
  stage(config, "split", {p.manifest()}, [&](const RunPaths& paths) {
    const auto manifest = load_manifest(paths);
    const auto assignment = cohort::split_cohort(manifest, config.fractions, config.split_seed);
    text::write_file_atomic(paths.split(), assignment.to_csv(manifest));
    const auto report = cohort::check_leakage(assignment, manifest);
    text::write_file_atomic(paths.leakage(), report.to_json());
    const auto r = assignment.realized();
    log("split: train {} ({:.1f}%), val {} ({:.1f}%), test {} ({:.1f}%)", assignment.count(cohort::Split::Train),
        100 * r.train, assignment.count(cohort::Split::Val), 100 * r.val, assignment.count(cohort::Split::Test),
        100 * r.test);
    if (!report.clean()) {
      throw Error(fmt::format("leakage detected: {} patients and {} image refs cross splits (see {})",
                              report.crossing_patients.size(), report.crossing_image_refs.size(),
                              paths.leakage().string()));
    }
    log("leakage check: clean");
  });
}

void do_train(const RunConfig& config) {
  const RunPaths p = run_paths(config);
  stage(config, "train", {p.manifest(), p.split()}, [&](const RunPaths& paths) {
    const auto manifest = load_manifest(paths);
    const auto assignment = load_split(paths);
    const auto leak = cohort::check_leakage(assignment, manifest);
    if (!leak.clean()) throw ValidationError("split file leaks patients across splits; re-run split");
    models::Model model = models::build_model(config.model);
    log("train: {} ({} parameters), lr {}, batch {}, {} epochs, augmentation {}",
        models::to_string(config.model.backbone), models::count_parameters(model), config.train.initial_lr,
        config.train.batch_size, config.train.max_epochs, config.train.augmentation.any_enabled() ? "on" : "off");
    training::TrainOptions opts;
    opts.run_dir = paths.dir;
    opts.on_epoch = [](const training::EpochRecord& e) {
      log("epoch {:3d}  train_loss {:.4f}  val_loss {:.4f}  val_acc {:.4f}  lr {:g}  ({:.1f}s)", e.epoch,
          e.train_loss, e.val_loss, e.val_acc, e.lr, e.wall_seconds);
    };
    const auto loader = make_loader(config, paths, config.model, manifest.size());
    const auto result = training::train(model, manifest, assignment, config.train, loader, opts);
    if (result.best_checkpoint) {
      log("best epoch {} (val_loss {:.4f}) -> {}", result.best_epoch, result.best_val_loss,
          result.best_checkpoint->string());
    }
  });
}

void do_evaluate(const RunConfig& config, const std::optional<fs::path>& checkpoint) {
  const RunPaths p = run_paths(config);
  const fs::path ckpt = require_checkpoint(p, checkpoint);
  stage(config, "evaluate", {p.manifest(), p.split(), ckpt}, [&](const RunPaths& paths) {
    const auto manifest = load_manifest(paths);
    const auto assignment = load_split(paths);
    const auto test = assignment.records_in(manifest, cohort::Split::Test);
    if (test.empty()) throw ValidationError("the test split is empty; nothing to evaluate");
    auto loaded = models::load_checkpoint(ckpt);
    const auto loader = make_loader(config, paths, loaded.model.config(), 0);
    const auto result = training::evaluate_epoch(loaded.model, test, loader, config.train.batch_size);
    const auto& preds = result.predictions;
    text::write_file_atomic(paths.predictions(), evaluation::predictions_to_csv(preds));

    const auto report = evaluation::classification_report(preds);
    const auto buckets =
        evaluation::confidence_buckets(preds, config.evaluation.hi_threshold, config.evaluation.lo_threshold);
    std::vector<evaluation::SubgroupReport> subs;
    for (auto facet : config.evaluation.subgroups) {
      subs.push_back(evaluation::subgroup_report(preds, manifest, facet, config.evaluation.min_support));
    }
    text::write_file_atomic(paths.metrics_json(), evaluation::metrics_json(report, buckets, subs));
    std::string txt = evaluation::render_metrics_table(std::string(models::to_string(loaded.model.config().backbone)),
                                                       report);
    txt += "\n" + evaluation::render_buckets(buckets, report.counts);
    for (const auto& s : subs) txt += "\n" + evaluation::render_subgroups(s);
    text::write_file_atomic(paths.metrics_txt(), txt);
    std::fputs(txt.c_str(), stdout);
  });
}

std::string case_stem(std::string_view group, std::size_t rank, const std::string& study, explain::Method m) {
  return fmt::format("{}_{:02d}_{}_{}", group, rank, study, explain::to_string(m));
}

void do_explain(const RunConfig& config, const std::optional<fs::path>& checkpoint,
                const std::optional<fs::path>& predictions) {
  const RunPaths p = run_paths(config);
  const fs::path ckpt = require_checkpoint(p, checkpoint);
  const fs::path pred_path = predictions.value_or(p.predictions());
  if (!fs::exists(pred_path)) throw ValidationError("predictions file not found: " + pred_path.string());
  stage(config, "explain", {p.manifest(), ckpt, pred_path}, [&](const RunPaths& paths) {
    const auto manifest = load_manifest(paths);
    const auto preds = evaluation::read_predictions(pred_path);
    auto loaded = models::load_checkpoint(ckpt);
    models::Model& model = loaded.model;
    const auto loader = make_loader(config, paths, model.config(), 0);
    const auto sel = explain::select_error_cases(preds, config.explain.k);
    fs::remove_all(paths.figures());
    fs::create_directories(paths.figures());
    text::write_file_atomic(paths.selection(), explain::selection_to_csv(sel));

    std::map<std::string, Label> predicted;
    for (const auto& r : preds) predicted[r.study_id] = r.predicted;
    std::size_t composites = 0, degenerate = 0;
    auto render_group = [&](std::string_view group, const std::vector<std::string>& ids) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto* rec = manifest.find(ids[i]);
        if (!rec) throw ValidationError("prediction for study " + ids[i] + " has no manifest record");
        const imaging::Image img = loader(*rec);
        const Label target = predicted.at(ids[i]);
        for (auto method : config.explain.methods) {
          const auto map = method == explain::Method::Saliency ? explain::saliency_map(model, img, target)
                                                                : explain::grad_cam(model, img, target);
          const std::string stem = case_stem(group, i + 1, ids[i], method);
          if (map.degenerate) {
            ++degenerate;
            log("note: degenerate {} map for {} (all-zero attribution)", explain::to_string(method), ids[i]);
          }
          explain::write_map(map, paths.figures() / "maps", stem, ids[i]);
          imaging::save_png_u8(explain::overlay(img, map, config.explain.alpha),
                               paths.figures() / (stem + ".png"));
          ++composites;
        }
      }
    };
    render_group("correct", sel.correct);
    render_group("false_positive", sel.false_positive);
    render_group("false_negative", sel.false_negative);
    log("explain: {} correct, {} false positive, {} false negative cases; {} composites ({} degenerate maps)",
        sel.correct.size(), sel.false_positive.size(), sel.false_negative.size(), composites, degenerate);
  });
}

}  // namespace

fs::path cohort_build(const RunConfig& config) {
  do_cohort_build(config);
  return run_paths(config).dir;
}

fs::path split(const RunConfig& config) {
  do_split(config);
  return run_paths(config).dir;
}

fs::path train(const RunConfig& config) {
  do_train(config);
  return run_paths(config).dir;
}

fs::path evaluate(const RunConfig& config, const std::optional<fs::path>& checkpoint) {
  do_evaluate(config, checkpoint);
  return run_paths(config).dir;
}

fs::path explain(const RunConfig& config, const std::optional<fs::path>& checkpoint,
                 const std::optional<fs::path>& predictions) {
  do_explain(config, checkpoint, predictions);
  return run_paths(config).dir;
}

fs::path run_all(const RunConfig& config) {
  config.validate();
  const RunPaths paths = run_paths(config);
  RunLock lock(paths.dir);
  do_cohort_build(config);
  do_split(config);
  do_train(config);
  do_evaluate(config, std::nullopt);
  do_explain(config, std::nullopt, std::nullopt);
  return paths.dir;
}

std::string parameter_report() {
  using models::BackboneKind;
  std::string out = fmt::format("{:<16} {:>14} {:>14} {:>10}  {}\n", "backbone", "stacked head", "replaced head",
                                "published", "status");
  for (auto kind : {BackboneKind::DenseNet121, BackboneKind::EfficientNetB0, BackboneKind::ResNet50,
                    BackboneKind::TinyConv}) {
    models::ModelConfig c;
    c.backbone = kind;
    c.pretrained = models::Pretrained::None;
    if (kind == BackboneKind::TinyConv) c = models::ModelConfig::tiny();
    const auto stacked = models::count_parameters(c);
    c.head = models::HeadStyle::Replaced;
    const auto replaced = models::count_parameters(c);
    const auto published = models::reported_parameter_count(kind);
    std::string status = "test network";
    std::string pub = "-";
    if (published) {
      pub = fmt::format("{:.0f}M", *published / 1e6);
      const double rel = std::abs(static_cast<double>(stacked) - *published) / *published;
      status = rel <= 0.15 ? "consistent"
                           : fmt::format("DISCREPANCY: canonical count differs from published {} by {:.0f}%", pub,
                                         100 * rel);
    }
    out += fmt::format("{:<16} {:>14} {:>14} {:>10}  {}\n", models::to_string(kind), stacked, replaced, pub, status);
  }
  return out;
}

}  // namespace efcxr::pipeline
