// efcxr: command-line front end for the cohort -> split -> train -> evaluate
// -> explain pipeline. Exit codes: 0 success, 1 runtime failure, 2 usage or
// validation failure.
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "efcxr/pipeline.hpp"
#include "efcxr/run_config.hpp"
#include "efcxr/text.hpp"

using namespace efcxr;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config_path;
  std::string profile = "tiny";
  std::string out_root;
  std::string run_id;
  std::vector<std::string> synthetic;
  std::string metadata, icd_map, image_root;
  std::optional<double> train_frac, val_frac, test_frac;
  std::optional<std::uint64_t> split_seed;
  std::string arch, augment, pretrained, weights;
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::string subgroups, methods;
  std::optional<std::size_t> k;
  std::optional<double> alpha;
  std::string checkpoint, predictions;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "Run configuration (JSON)");
  cmd->add_option("--profile", o.profile, "Base settings when no --config is given: tiny or paper")
      ->check(CLI::IsMember({"tiny", "paper"}));
  cmd->add_option("--out", o.out_root, fmt::format("Output root (default ${} or ./out)", run::kOutputRootEnv));
  cmd->add_option("--run-id", o.run_id, "Run directory name under the output root");
}

void add_cohort(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--synthetic", o.synthetic, "Synthetic cohort, e.g. --synthetic n=200 seed=7 signal=1.0 size=64")
      ->expected(0, 4);
  cmd->add_option("--metadata", o.metadata, "Study metadata CSV");
  cmd->add_option("--icd-map", o.icd_map, "ICD code map CSV (code,label)");
  cmd->add_option("--image-root", o.image_root, "Directory that image_refs are relative to");
}

void add_split(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--train-fraction", o.train_frac, "Share of studies in train (default 0.65)");
  cmd->add_option("--val-fraction", o.val_frac, "Share of studies in val (default 0.10)");
  cmd->add_option("--test-fraction", o.test_frac, "Share of studies in test (default 0.25)");
  cmd->add_option("--split-seed", o.split_seed, "Seed of the patient shuffle");
}

void add_train(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--arch", o.arch, "resnet50, efficientnet_b0, densenet121 or tinyconv");
  cmd->add_option("--augment", o.augment, "Training augmentation")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--pretrained", o.pretrained, "imagenet or none");
  cmd->add_option("--weights", o.weights, "ImageNet weight archive (safetensors)");
  cmd->add_option("--epochs", o.epochs, "Maximum training epochs");
  cmd->add_option("--batch-size", o.batch_size, "Images per optimizer step");
  cmd->add_option("--seed", o.seed, "Training seed (init, data order, augmentation)");
}

void add_evaluate(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <run>/best.ckpt)");
  cmd->add_option("--subgroups", o.subgroups, "Comma-separated facets: race,sex");
}

void add_explain(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--predictions", o.predictions, "Predictions CSV (default <run>/predictions.csv)");
  cmd->add_option("--k", o.k, "Cases per group");
  cmd->add_option("--methods", o.methods, "Comma-separated: saliency,gradcam");
  cmd->add_option("--alpha", o.alpha, "Overlay blend weight");
}

void apply_synthetic(run::RunConfig& c, const std::vector<std::string>& kv) {
  cohort::SyntheticOptions s = c.cohort.synthetic.value_or(cohort::SyntheticOptions{});
  for (const auto& item : kv) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("--synthetic expects key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "n") s.n = std::stoi(value);
      else if (key == "seed") s.seed = std::stoull(value);
      else if (key == "signal" || key == "class_signal") s.class_signal = std::stod(value);
      else if (key == "size" || key == "image_size") s.image_size = std::stoi(value);
      else throw ValidationError("unknown --synthetic key '" + key + "' (n, seed, signal, size)");
    } catch (const std::invalid_argument&) {
      throw ValidationError("--synthetic " + key + ": not a number: " + value);
    }
  }
  c.cohort = {};
  c.cohort.synthetic = s;
}

std::vector<std::string> csv_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& part : text::split(s, ',')) {
    if (!text::trim(part).empty()) out.push_back(text::trim(part));
  }
  return out;
}

run::RunConfig resolve(const Overrides& o, const CLI::App* cmd) {
  run::RunConfig c;
  if (!o.config_path.empty()) c = run::RunConfig::read(o.config_path);
  else c = o.profile == "paper" ? run::paper_profile() : run::tiny_profile();

  if (!o.out_root.empty()) c.output_root = o.out_root;
  if (!o.run_id.empty()) c.run_id = o.run_id;
  if (const auto* opt = cmd->get_option_no_throw("--synthetic"); opt && opt->count() > 0) apply_synthetic(c, o.synthetic);
  if (!o.metadata.empty() || !o.icd_map.empty()) {
    c.cohort.synthetic.reset();
    if (!o.metadata.empty()) c.cohort.metadata = o.metadata;
    if (!o.icd_map.empty()) c.cohort.icd_map = o.icd_map;
  }
  if (!o.image_root.empty()) c.cohort.image_root = o.image_root;
  if (o.train_frac) c.fractions.train = *o.train_frac;
  if (o.val_frac) c.fractions.val = *o.val_frac;
  if (o.test_frac) c.fractions.test = *o.test_frac;
  if (o.split_seed) c.split_seed = *o.split_seed;
  if (!o.arch.empty()) {
    const auto kind = models::parse_backbone(o.arch);
    if (kind != c.model.backbone) {
      const auto seed = c.model.init_seed;
      c.model = kind == models::BackboneKind::TinyConv ? models::ModelConfig::tiny() : models::ModelConfig{};
      c.model.backbone = kind;
      c.model.init_seed = seed;
    }
  }
  if (!o.pretrained.empty()) c.model.pretrained = models::parse_pretrained(o.pretrained);
  if (!o.weights.empty()) c.model.weights_path = o.weights;
  if (!o.augment.empty()) {
    c.train.augmentation.rotation_enabled = o.augment == "on";
    c.train.augmentation.crop_enabled = o.augment == "on";
  }
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.seed) c.train.seed = *o.seed;
  c.model.init_seed = training::init_seed_for(c.train.seed);
  if (!o.subgroups.empty()) {
    c.evaluation.subgroups.clear();
    for (const auto& f : csv_list(o.subgroups)) c.evaluation.subgroups.push_back(evaluation::parse_facet(f));
  }
  if (!o.methods.empty()) {
    c.explain.methods.clear();
    for (const auto& m : csv_list(o.methods)) c.explain.methods.push_back(explain::parse_method(m));
  }
  if (o.k) c.explain.k = *o.k;
  if (o.alpha) c.explain.alpha = *o.alpha;
  c.validate();
  return c;
}

std::optional<fs::path> opt_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced vs. preserved ejection fraction from chest X-rays"};
  app.require_subcommand(1);
  Overrides o;

  auto* cohort_cmd = app.add_subcommand("cohort-build", "Build the labelled cohort manifest and demographics");
  add_common(cohort_cmd, o);
  add_cohort(cohort_cmd, o);

  auto* split_cmd = app.add_subcommand("split", "Patient-grouped train/val/test split with leakage check");
  add_common(split_cmd, o);
  add_split(split_cmd, o);

  auto* train_cmd = app.add_subcommand("train", "Train a classifier; writes history.csv and checkpoints");
  add_common(train_cmd, o);
  add_cohort(train_cmd, o);
  add_train(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("evaluate", "Predict the test split and write metric reports");
  add_common(eval_cmd, o);
  add_cohort(eval_cmd, o);
  add_evaluate(eval_cmd, o);

  auto* explain_cmd = app.add_subcommand("explain", "Saliency and Grad-CAM figures for selected cases");
  add_common(explain_cmd, o);
  add_cohort(explain_cmd, o);
  add_explain(explain_cmd, o);
  explain_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <run>/best.ckpt)");

  auto* run_cmd = app.add_subcommand("run", "All stages in sequence");
  add_common(run_cmd, o);
  add_cohort(run_cmd, o);
  add_split(run_cmd, o);
  add_train(run_cmd, o);
  add_evaluate(run_cmd, o);
  add_explain(run_cmd, o);

  app.add_subcommand("params", "Parameter counts of every backbone against the published figures");

  std::string init_out;
  auto* init_cmd = app.add_subcommand("init-config", "Print a complete run configuration");
  init_cmd->add_option("--profile", o.profile, "tiny or paper")->check(CLI::IsMember({"tiny", "paper"}));
  init_cmd->add_option("-o,--output", init_out, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("params")) {
      std::fputs(pipeline::parameter_report().c_str(), stdout);
      return 0;
    }
    if (app.got_subcommand("init-config")) {
      run::RunConfig c = o.profile == "paper" ? run::paper_profile() : run::tiny_profile();
      auto j = c.to_json();
      if (o.profile == "paper") {
        j["cohort"] = {{"metadata", "metadata.csv"}, {"icd_map", "icd_map.csv"}, {"image_root", ""}};
        j["model"]["weights_path"] = "resnet50_imagenet.safetensors";
      }
      const std::string text = j.dump(2) + "\n";
      if (init_out.empty()) std::fputs(text.c_str(), stdout);
      else text::write_file_atomic(init_out, text);
      return 0;
    }
    CLI::App* cmd = app.get_subcommands().front();
    const run::RunConfig config = resolve(o, cmd);
    fs::path dir;
    if (cmd == cohort_cmd) dir = pipeline::cohort_build(config);
    else if (cmd == split_cmd) dir = pipeline::split(config);
    else if (cmd == train_cmd) dir = pipeline::train(config);
    else if (cmd == eval_cmd) dir = pipeline::evaluate(config, opt_path(o.checkpoint));
    else if (cmd == explain_cmd) dir = pipeline::explain(config, opt_path(o.checkpoint), opt_path(o.predictions));
    else if (cmd == run_cmd) dir = pipeline::run_all(config);
    fmt::print(stderr, "outputs in {}\n", dir.string());
    return 0;
  } catch (const ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
