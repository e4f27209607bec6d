#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "efcxr/imaging.hpp"
#include "efcxr/types.hpp"

namespace efcxr::models {

using imaging::Image;

enum class BackboneKind { DenseNet121, EfficientNetB0, ResNet50, TinyConv };
enum class Pretrained { ImageNet, None };

/// How the single Reduced-EF logit is attached to a backbone.
///  - Stacked: the backbone keeps its 1000-way ImageNet classifier and a
///    Linear(1000 -> 1) is appended.
///  - Replaced: the ImageNet classifier is swapped for Linear(features -> 1).
/// TinyConv has no ImageNet classifier; both styles give the same network.
enum class HeadStyle { Stacked, Replaced };

enum class Precision { Float32, Float64 };

std::string_view to_string(BackboneKind kind);
BackboneKind parse_backbone(std::string_view text);
std::string_view to_string(Pretrained p);
Pretrained parse_pretrained(std::string_view text);
std::string_view to_string(HeadStyle h);
HeadStyle parse_head_style(std::string_view text);
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

struct ModelConfig {
  BackboneKind backbone = BackboneKind::ResNet50;
  Pretrained pretrained = Pretrained::ImageNet;
  int input_height = 224;
  int input_width = 224;
  HeadStyle head = HeadStyle::Stacked;
  Precision precision = Precision::Float32;
  /// Weight archive for Pretrained::ImageNet (see tools/export_torchvision_weights.py).
  std::string weights_path;
  std::uint64_t init_seed = 0;

  /// 1 for TinyConv, 3 for the ImageNet backbones.
  int input_channels() const;
  /// Throws ValidationError. ImageNet backbones need sides that are multiples
  /// of 32; every backbone needs sides >= 8.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  static ModelConfig tiny(int height = 64, int width = 64);
};

/// The final spatial feature map before global pooling, per backbone.
std::string_view last_conv_layer(BackboneKind kind);

/// Activations of the last convolutional feature map (C x H x W, row-major)
/// and the gradient of the target score with respect to them.
struct FeatureMapGradient {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> activation;
  std::vector<double> gradient;
  double score = 0;
};

/// Binary classifier with a single logit z = log-odds of Reduced EF. The
/// score of a target class is z for Reduced EF and -z for Preserved EF.
/// Attribution calls are not reentrant.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int input_height() const = 0;
  virtual int input_width() const = 0;
  virtual int input_channels() const = 0;
  virtual bool training() const { return false; }

  /// One logit per image, order-aligned with the batch.
  virtual std::vector<double> logits(std::span<const Image> batch) = 0;

  /// d score(target) / d input, shaped like the input (HWC).
  virtual Image score_input_gradient(const Image& image, Label target) = 0;

  /// Last-conv activations and d score(target) / d activations. Throws
  /// ValidationError when the network has no registered last-conv layer.
  virtual FeatureMapGradient last_conv_gradient(const Image& image, Label target) = 0;

  /// Throws ValidationError naming expected vs. got when `image` does not
  /// match the input shape.
  void check_input(const Image& image) const;
};

/// Numerically stable logistic function.
double sigmoid(double z);

/// sigmoid of each logit. In double precision logits above ~36.7 round to
/// exactly 1.0.
std::vector<double> predict_proba(Classifier& model, std::span<const Image> batch);

struct ParameterInfo {
  std::string name;
  std::vector<std::int64_t> shape;
  std::int64_t numel = 0;
};

/// libtorch-backed network. Implementation details live in models_torch.hpp.
class Model final : public Classifier {
 public:
  struct Impl;

  explicit Model(std::unique_ptr<Impl> impl);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model() override;

  const ModelConfig& config() const;

  int input_height() const override;
  int input_width() const override;
  int input_channels() const override;
  bool training() const override;
  void set_training(bool on);

  std::vector<double> logits(std::span<const Image> batch) override;
  Image score_input_gradient(const Image& image, Label target) override;
  FeatureMapGradient last_conv_gradient(const Image& image, Label target) override;

  /// Trainable parameters in registration order.
  std::vector<ParameterInfo> parameters() const;
  std::vector<double> parameter_values(const std::string& name) const;
  /// Throws ValidationError on an unknown name or size mismatch.
  void set_parameter(const std::string& name, std::span<const double> values);

  /// Spatial size of the last conv feature map for the configured input.
  std::pair<int, int> last_conv_size();

  Impl& impl() noexcept { return *impl_; }
  const Impl& impl() const noexcept { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Builds the configured network in training mode. Pretrained::ImageNet
/// requires weights_path to name a readable weight archive; a missing source
/// is an error, never a silent random initialisation.
Model build_model(const ModelConfig& config);

/// Total trainable scalar parameters, head included.
std::int64_t count_parameters(const Model& model);

/// Parameter count of the configured network, computed without the
/// pretrained weights source.
std::int64_t count_parameters(ModelConfig config);

/// Parameter counts reported for the three backbones in the published
/// comparison ("8M", "11M", "23M"), nullopt for TinyConv.
std::optional<double> reported_parameter_count(BackboneKind kind);

// Checkpoints -------------------------------------------------------------------

/// Writes a safetensors archive holding every parameter and buffer, with the
/// model config and `training_state` in the metadata block. Written to a
/// temporary file and renamed into place. Save -> load -> save yields
/// identical bytes.
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const nlohmann::json& training_state = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  nlohmann::json training_state;
};

/// Rebuilds the model from the stored config (without touching any
/// pretrained source) and loads all tensors. The model is left in
/// evaluation mode.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace efcxr::models
