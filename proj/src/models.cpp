#include <fmt/format.h>

#include "models_torch.hpp"

namespace efcxr::models {

// Model::Impl -------------------------------------------------------------------------

torch::Tensor Model::Impl::to_tensor(std::span<const Image* const> batch) const {
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t c = config.input_channels();
  const int64_t h = config.input_height;
  const int64_t w = config.input_width;
  torch::Tensor t = torch::empty({n, c, h, w}, torch::kFloat64);
  auto acc = t.accessor<double, 4>();
  for (int64_t i = 0; i < n; ++i) {
    const Image& img = *batch[i];
    if (img.height() != h || img.width() != w || img.channels() != c) {
      throw ValidationError(fmt::format("input shape mismatch: expected {}x{}x{}, got {}x{}x{}", h, w, c,
                                        img.height(), img.width(), img.channels()));
    }
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        for (int64_t ch = 0; ch < c; ++ch) acc[i][ch][y][x] = img.at(y, x, ch);
      }
    }
  }
  return t.to(dtype);
}

torch::Tensor Model::Impl::to_tensor(std::span<const Image> batch) const {
  std::vector<const Image*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& img : batch) ptrs.push_back(&img);
  return to_tensor(std::span<const Image* const>(ptrs));
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

// Model -------------------------------------------------------------------------------

Model::Model(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

const ModelConfig& Model::config() const { return impl_->config; }
int Model::input_height() const { return impl_->config.input_height; }
int Model::input_width() const { return impl_->config.input_width; }
int Model::input_channels() const { return impl_->config.input_channels(); }
bool Model::training() const { return impl_->net->is_training(); }
void Model::set_training(bool on) { impl_->net->train(on); }

namespace {

void require_eval(const Model& m, std::string_view what) {
  if (m.training()) {
    throw ValidationError(std::string(what) + " requires the model in evaluation mode");
  }
}

std::vector<double> to_doubles(const torch::Tensor& t) {
  torch::Tensor c = t.detach().to(torch::kFloat64).contiguous();
  const double* p = c.data_ptr<double>();
  return std::vector<double>(p, p + c.numel());
}

torch::Tensor target_score(const torch::Tensor& logit, Label target) {
  return target == Label::ReducedEF ? logit.sum() : -logit.sum();
}

}  // namespace

std::vector<double> Model::logits(std::span<const Image> batch) {
  require_eval(*this, "logits");
  if (batch.empty()) return {};
  torch::NoGradGuard no_grad;
  return to_doubles(impl_->net->forward(impl_->to_tensor(batch)).view({-1}));
}

Image Model::score_input_gradient(const Image& image, Label target) {
  require_eval(*this, "score_input_gradient");
  check_input(image);
  torch::Tensor x = impl_->to_tensor(std::span<const Image>(&image, 1)).requires_grad_(true);
  torch::Tensor score = target_score(impl_->net->forward(x), target);
  torch::Tensor grad = torch::autograd::grad({score}, {x})[0].to(torch::kFloat64).contiguous();
  Image out(image.height(), image.width(), image.channels());
  auto acc = grad.accessor<double, 4>();
  for (int y = 0; y < image.height(); ++y) {
    for (int x2 = 0; x2 < image.width(); ++x2) {
      for (int c = 0; c < image.channels(); ++c) out.at(y, x2, c) = acc[0][c][y][x2];
    }
  }
  return out;
}

FeatureMapGradient Model::last_conv_gradient(const Image& image, Label target) {
  require_eval(*this, "last_conv_gradient");
  check_input(image);
  torch::Tensor x = impl_->to_tensor(std::span<const Image>(&image, 1));
  torch::Tensor fmap = impl_->net->features(x);
  torch::Tensor score = target_score(impl_->net->head(fmap), target);
  torch::Tensor grad = torch::autograd::grad({score}, {fmap})[0];
  FeatureMapGradient out;
  out.channels = static_cast<int>(fmap.size(1));
  out.height = static_cast<int>(fmap.size(2));
  out.width = static_cast<int>(fmap.size(3));
  out.activation = to_doubles(fmap[0]);
  out.gradient = to_doubles(grad[0]);
  out.score = score.item<double>();
  return out;
}

std::vector<ParameterInfo> Model::parameters() const {
  std::vector<ParameterInfo> out;
  for (const auto& item : impl_->net->named_parameters(true)) {
    ParameterInfo info;
    info.name = item.key();
    info.shape = item.value().sizes().vec();
    info.numel = item.value().numel();
    out.push_back(std::move(info));
  }
  return out;
}

std::vector<double> Model::parameter_values(const std::string& name) const {
  const auto params = impl_->net->named_parameters(true);
  const torch::Tensor* t = params.find(name);
  if (!t) throw ValidationError("unknown parameter '" + name + "'");
  return to_doubles(*t);
}

void Model::set_parameter(const std::string& name, std::span<const double> values) {
  auto params = impl_->net->named_parameters(true);
  torch::Tensor* t = params.find(name);
  if (!t) throw ValidationError("unknown parameter '" + name + "'");
  if (static_cast<int64_t>(values.size()) != t->numel()) {
    throw ValidationError(fmt::format("parameter '{}' has {} values, got {}", name, t->numel(), values.size()));
  }
  torch::NoGradGuard no_grad;
  torch::Tensor src = torch::from_blob(const_cast<double*>(values.data()), {t->numel()}, torch::kFloat64);
  t->copy_(src.view(t->sizes()).to(t->dtype()));
}

std::pair<int, int> Model::last_conv_size() {
  torch::NoGradGuard no_grad;
  const bool was_training = training();
  impl_->net->eval();
  torch::Tensor x = torch::zeros({1, input_channels(), input_height(), input_width()}, impl_->dtype);
  torch::Tensor fmap = impl_->net->features(x);
  impl_->net->train(was_training);
  return {static_cast<int>(fmap.size(2)), static_cast<int>(fmap.size(3))};
}

// Construction --------------------------------------------------------------------------

namespace {

Model build_unloaded(const ModelConfig& config) {
  config.validate();
  auto impl = std::make_unique<Model::Impl>();
  impl->config = config;
  impl->net = make_backbone(config);
  impl->dtype = config.precision == Precision::Float64 ? torch::kFloat64 : torch::kFloat32;
  impl->net->to(impl->dtype);
  impl->net->train(true);
  return Model(std::move(impl));
}

}  // namespace

Model build_model(const ModelConfig& config) {
  if (config.pretrained == Pretrained::ImageNet) {
    if (config.backbone == BackboneKind::TinyConv) {
      throw ValidationError("tinyconv has no ImageNet weights; use pretrained=none");
    }
    if (config.weights_path.empty()) {
      throw ValidationError(fmt::format(
          "pretrained=imagenet for {} but no weights_path was given; export torchvision weights with "
          "tools/export_torchvision_weights.py or set pretrained=none",
          to_string(config.backbone)));
    }
    if (!std::filesystem::exists(config.weights_path)) {
      throw ValidationError("ImageNet weights not found: " + config.weights_path);
    }
  }
  Model model = build_unloaded(config);
  if (config.pretrained == Pretrained::ImageNet) {
    load_state(*model.impl().net, config.weights_path, head_prefixes(config));
  }
  return model;
}

std::int64_t count_parameters(const Model& model) {
  std::int64_t total = 0;
  for (const auto& p : model.impl().net->parameters(true)) {
    if (p.requires_grad()) total += p.numel();
  }
  return total;
}

std::int64_t count_parameters(ModelConfig config) {
  config.pretrained = Pretrained::None;
  return count_parameters(build_unloaded(config));
}

}  // namespace efcxr::models
