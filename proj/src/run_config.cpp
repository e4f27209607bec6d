#include "efcxr/run_config.hpp"

#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "efcxr/text.hpp"

namespace efcxr::run {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were read so leftovers can
// be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("config: {} must be an object", path_));
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ValidationError(fmt::format("config: {}.{} has the wrong type ({})", path_, key, it->dump()));
    }
  }

  template <typename F>
  void read_with(const char* key, F&& parse) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      parse(*it);
    } catch (const json::exception&) {
      throw ValidationError(fmt::format("config: {}.{} has the wrong type ({})", path_, key, it->dump()));
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), path_ + "." + key);
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ValidationError(fmt::format("config: unknown key {}.{}", path_, k));
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string path_string(const std::filesystem::path& p) { return p.string(); }

}  // namespace

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw ValidationError(fmt::format("config: run_id '{}' must be a plain directory name", run_id));
  }
  if (cohort.synthetic) {
    const auto& s = *cohort.synthetic;
    if (s.n < 10) throw ValidationError(fmt::format("config: cohort.synthetic.n must be >= 10, got {}", s.n));
    if (!(s.class_signal >= 0.0 && s.class_signal <= 1.0)) {
      throw ValidationError("config: cohort.synthetic.class_signal must lie in [0, 1]");
    }
    if (s.image_size < 16) throw ValidationError("config: cohort.synthetic.image_size must be >= 16");
  } else if (cohort.metadata.empty() || cohort.icd_map.empty()) {
    throw ValidationError("config: cohort needs either synthetic settings or both metadata and icd_map");
  }
  fractions.validate();
  model.validate();
  train.validate();
  if (!(0.0 < evaluation.lo_threshold && evaluation.lo_threshold < evaluation.hi_threshold &&
        evaluation.hi_threshold < 1.0)) {
    throw ValidationError("config: evaluation thresholds must satisfy 0 < lo < hi < 1");
  }
  if (explain.k < 1) throw ValidationError("config: explain.k must be >= 1");
  if (!(explain.alpha >= 0.0 && explain.alpha <= 1.0)) {
    throw ValidationError("config: explain.alpha must lie in [0, 1]");
  }
  if (explain.methods.empty()) throw ValidationError("config: explain.methods must not be empty");
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["output_root"] = path_string(output_root);
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  if (cohort.synthetic) {
    c["synthetic"] = {{"n", cohort.synthetic->n},
                      {"class_signal", cohort.synthetic->class_signal},
                      {"seed", cohort.synthetic->seed},
                      {"image_size", cohort.synthetic->image_size}};
  } else {
    c["metadata"] = path_string(cohort.metadata);
    c["icd_map"] = path_string(cohort.icd_map);
  }
  c["image_root"] = path_string(cohort.image_root);
  j["cohort"] = c;
  j["split"] = {{"train", fractions.train}, {"val", fractions.val}, {"test", fractions.test}, {"seed", split_seed}};
  j["model"] = {{"backbone", models::to_string(model.backbone)},
                {"pretrained", models::to_string(model.pretrained)},
                {"input_size", {model.input_height, model.input_width}},
                {"head", models::to_string(model.head)},
                {"precision", models::to_string(model.precision)},
                {"weights_path", model.weights_path}};
  const auto& a = train.augmentation;
  j["train"] = {{"initial_lr", train.initial_lr},
                {"plateau_patience", train.plateau_patience},
                {"lr_factor", train.lr_factor},
                {"max_epochs", train.max_epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"augmentation",
                 {{"rotation_enabled", a.rotation_enabled},
                  {"rotation_max_deg", a.rotation_max_deg},
                  {"crop_enabled", a.crop_enabled},
                  {"crop_scale_min", a.crop_scale_min},
                  {"crop_scale_max", a.crop_scale_max}}}};
  std::vector<std::string> facets, methods;
  for (auto f : evaluation.subgroups) facets.emplace_back(evaluation::to_string(f));
  for (auto m : explain.methods) methods.emplace_back(explain::to_string(m));
  j["evaluation"] = {{"hi_threshold", evaluation.hi_threshold},
                     {"lo_threshold", evaluation.lo_threshold},
                     {"subgroups", facets},
                     {"min_support", evaluation.min_support}};
  j["explain"] = {{"k", explain.k},
                  {"alpha", explain.alpha},
                  {"methods", methods},
                  {"colormap", explain::kColormapName}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c = tiny_profile();
  c.cohort = {};
  Section root(j, "$");
  root.read("run_id", c.run_id);
  root.read_with("output_root", [&](const json& v) { c.output_root = v.get<std::string>(); });

  {
    Section s = root.child("cohort");
    if (s.has("synthetic")) {
      Section syn = s.child("synthetic");
      cohort::SyntheticOptions o;
      syn.read("n", o.n);
      syn.read("class_signal", o.class_signal);
      syn.read("seed", o.seed);
      syn.read("image_size", o.image_size);
      syn.finish();
      c.cohort.synthetic = o;
    }
    s.read_with("metadata", [&](const json& v) { c.cohort.metadata = v.get<std::string>(); });
    s.read_with("icd_map", [&](const json& v) { c.cohort.icd_map = v.get<std::string>(); });
    s.read_with("image_root", [&](const json& v) { c.cohort.image_root = v.get<std::string>(); });
    s.finish();
    if (c.cohort.synthetic && (!c.cohort.metadata.empty() || !c.cohort.icd_map.empty())) {
      throw ValidationError("config: cohort takes either synthetic or metadata/icd_map, not both");
    }
  }
  {
    Section s = root.child("split");
    s.read("train", c.fractions.train);
    s.read("val", c.fractions.val);
    s.read("test", c.fractions.test);
    s.read("seed", c.split_seed);
    s.finish();
  }
  {
    Section s = root.child("model");
    s.read_with("backbone", [&](const json& v) { c.model.backbone = models::parse_backbone(v.get<std::string>()); });
    s.read_with("pretrained", [&](const json& v) { c.model.pretrained = models::parse_pretrained(v.get<std::string>()); });
    s.read_with("input_size", [&](const json& v) {
      const auto hw = v.get<std::vector<int>>();
      if (hw.size() != 2) throw ValidationError("config: model.input_size must be [height, width]");
      c.model.input_height = hw[0];
      c.model.input_width = hw[1];
    });
    s.read_with("head", [&](const json& v) { c.model.head = models::parse_head_style(v.get<std::string>()); });
    s.read_with("precision", [&](const json& v) { c.model.precision = models::parse_precision(v.get<std::string>()); });
    s.read("weights_path", c.model.weights_path);
    s.finish();
  }
  {
    Section s = root.child("train");
    s.read("initial_lr", c.train.initial_lr);
    s.read("plateau_patience", c.train.plateau_patience);
    s.read("lr_factor", c.train.lr_factor);
    s.read("max_epochs", c.train.max_epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("seed", c.train.seed);
    Section a = s.child("augmentation");
    a.read("rotation_enabled", c.train.augmentation.rotation_enabled);
    a.read("rotation_max_deg", c.train.augmentation.rotation_max_deg);
    a.read("crop_enabled", c.train.augmentation.crop_enabled);
    a.read("crop_scale_min", c.train.augmentation.crop_scale_min);
    a.read("crop_scale_max", c.train.augmentation.crop_scale_max);
    a.finish();
    s.finish();
  }
  {
    Section s = root.child("evaluation");
    s.read("hi_threshold", c.evaluation.hi_threshold);
    s.read("lo_threshold", c.evaluation.lo_threshold);
    s.read_with("subgroups", [&](const json& v) {
      c.evaluation.subgroups.clear();
      for (const auto& f : v.get<std::vector<std::string>>()) c.evaluation.subgroups.push_back(evaluation::parse_facet(f));
    });
    s.read("min_support", c.evaluation.min_support);
    s.finish();
  }
  {
    Section s = root.child("explain");
    s.read("k", c.explain.k);
    s.read("alpha", c.explain.alpha);
    s.read_with("methods", [&](const json& v) {
      c.explain.methods.clear();
      for (const auto& m : v.get<std::vector<std::string>>()) c.explain.methods.push_back(explain::parse_method(m));
    });
    s.read_with("colormap", [&](const json& v) {
      if (v.get<std::string>() != explain::kColormapName) {
        throw ValidationError(fmt::format("config: explain.colormap must be '{}'", explain::kColormapName));
      }
    });
    s.finish();
  }
  root.finish();
  if (!c.cohort.synthetic && c.cohort.metadata.empty() && c.cohort.icd_map.empty()) {
    c.cohort.synthetic = cohort::SyntheticOptions{};
  }
  c.model.init_seed = training::init_seed_for(c.train.seed);
  c.validate();
  return c;
}

RunConfig RunConfig::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("config {}: {}", path.string(), e.what()));
  }
  return from_json(j);
}

RunConfig paper_profile() {
  RunConfig c;
  c.run_id = "paper";
  c.cohort = {};
  c.model = models::ModelConfig{};
  c.train = training::TrainConfig{};
  c.model.init_seed = training::init_seed_for(c.train.seed);
  return c;
}

RunConfig tiny_profile() {
  RunConfig c;
  c.run_id = "tiny";
  c.cohort.synthetic = cohort::SyntheticOptions{};
  c.model = models::ModelConfig::tiny(64, 64);
  c.train.batch_size = 1;
  c.train.max_epochs = 10;
  c.model.init_seed = training::init_seed_for(c.train.seed);
  return c;
}

std::filesystem::path resolve_output_root(const RunConfig& config) {
  if (!config.output_root.empty()) return config.output_root;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "out";
}

}  // namespace efcxr::run
