#include <cmath>

#include <fmt/format.h>

#include "efcxr/text.hpp"
#include "efcxr/models.hpp"

namespace efcxr::models {

// Enum spellings -------------------------------------------------------------------

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::DenseNet121: return "densenet121";
    case BackboneKind::EfficientNetB0: return "efficientnet_b0";
    case BackboneKind::ResNet50: return "resnet50";
    case BackboneKind::TinyConv: return "tinyconv";
  }
  return "";
}

BackboneKind parse_backbone(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "densenet121") return BackboneKind::DenseNet121;
  if (s == "efficientnet_b0" || s == "efficientnetb0") return BackboneKind::EfficientNetB0;
  if (s == "resnet50") return BackboneKind::ResNet50;
  if (s == "tinyconv") return BackboneKind::TinyConv;
  throw ValidationError("unknown backbone '" + std::string(t) +
                        "' (expected resnet50, efficientnet_b0, densenet121 or tinyconv)");
}

std::string_view to_string(Pretrained p) { return p == Pretrained::ImageNet ? "imagenet" : "none"; }

Pretrained parse_pretrained(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "imagenet") return Pretrained::ImageNet;
  if (s == "none") return Pretrained::None;
  throw ValidationError("unknown pretrained source '" + std::string(t) + "' (expected imagenet or none)");
}

std::string_view to_string(HeadStyle h) { return h == HeadStyle::Stacked ? "stacked" : "replaced"; }

HeadStyle parse_head_style(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "stacked") return HeadStyle::Stacked;
  if (s == "replaced") return HeadStyle::Replaced;
  throw ValidationError("unknown head style '" + std::string(t) + "' (expected stacked or replaced)");
}

std::string_view to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision parse_precision(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "float32") return Precision::Float32;
  if (s == "float64") return Precision::Float64;
  throw ValidationError("unknown precision '" + std::string(t) + "' (expected float32 or float64)");
}

// ModelConfig -------------------------------------------------------------------------

int ModelConfig::input_channels() const { return backbone == BackboneKind::TinyConv ? 1 : 3; }

void ModelConfig::validate() const {
  if (input_height < 8 || input_width < 8) {
    throw ValidationError(fmt::format("input size {}x{} below the 8x8 minimum", input_height, input_width));
  }
  if (backbone != BackboneKind::TinyConv && (input_height % 32 != 0 || input_width % 32 != 0)) {
    throw ValidationError(fmt::format("{} needs input sides that are multiples of 32, got {}x{}",
                                      to_string(backbone), input_height, input_width));
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"backbone", to_string(backbone)},
          {"pretrained", to_string(pretrained)},
          {"input_size", {input_height, input_width}},
          {"head", to_string(head)},
          {"precision", to_string(precision)},
          {"weights_path", weights_path},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.pretrained = parse_pretrained(j.at("pretrained").get<std::string>());
  c.input_height = j.at("input_size").at(0).get<int>();
  c.input_width = j.at("input_size").at(1).get<int>();
  c.head = parse_head_style(j.at("head").get<std::string>());
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.weights_path = j.value("weights_path", std::string());
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  return c;
}

ModelConfig ModelConfig::tiny(int height, int width) {
  ModelConfig c;
  c.backbone = BackboneKind::TinyConv;
  c.pretrained = Pretrained::None;
  c.input_height = height;
  c.input_width = width;
  c.precision = Precision::Float64;
  return c;
}

std::string_view last_conv_layer(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::ResNet50: return "layer4";
    case BackboneKind::DenseNet121: return "features.norm5 (after ReLU)";
    case BackboneKind::EfficientNetB0: return "features.8";
    case BackboneKind::TinyConv: return "conv2 (after SiLU)";
  }
  return "";
}

std::optional<double> reported_parameter_count(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::DenseNet121: return 8e6;
    case BackboneKind::EfficientNetB0: return 11e6;
    case BackboneKind::ResNet50: return 23e6;
    case BackboneKind::TinyConv: return std::nullopt;
  }
  return std::nullopt;
}

// Classifier ------------------------------------------------------------------------

void Classifier::check_input(const Image& image) const {
  if (image.height() != input_height() || image.width() != input_width() ||
      image.channels() != input_channels()) {
    throw ValidationError(fmt::format("input shape mismatch: expected {}x{}x{}, got {}x{}x{}",
                                      input_height(), input_width(), input_channels(), image.height(),
                                      image.width(), image.channels()));
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> predict_proba(Classifier& model, std::span<const Image> batch) {
  std::vector<double> z = model.logits(batch);
  for (double& v : z) v = sigmoid(v);
  return z;
}

}  // namespace efcxr::models
