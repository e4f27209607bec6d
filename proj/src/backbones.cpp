// Backbone definitions. Module and parameter names follow torchvision's
// state_dict layout so ImageNet weights exported from torchvision load by
// name.
#include <cmath>

#include <fmt/format.h>

#include "models_torch.hpp"

namespace efcxr::models {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t groups = 1,
                bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k)
                        .stride(stride)
                        .padding((k - 1) / 2)
                        .groups(groups)
                        .bias(bias));
}

void init_conv_bn(nn::Module& root) {
  for (auto& m : root.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->options.bias()) nn::init::zeros_(c->bias);
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      nn::init::ones_(bn->weight);
      nn::init::zeros_(bn->bias);
    }
  }
}

torch::Tensor global_pool(const torch::Tensor& fmap) {
  return torch::adaptive_avg_pool2d(fmap, {1, 1}).flatten(1);
}

// ResNet-50 ----------------------------------------------------------------------

class Bottleneck : public nn::Module {
 public:
  static constexpr int64_t kExpansion = 4;

  Bottleneck(int64_t inplanes, int64_t planes, int64_t stride, bool downsample)
      : conv1_(register_module("conv1", conv(inplanes, planes, 1))),
        bn1_(register_module("bn1", nn::BatchNorm2d(planes))),
        conv2_(register_module("conv2", conv(planes, planes, 3, stride))),
        bn2_(register_module("bn2", nn::BatchNorm2d(planes))),
        conv3_(register_module("conv3", conv(planes, planes * kExpansion, 1))),
        bn3_(register_module("bn3", nn::BatchNorm2d(planes * kExpansion))) {
    if (downsample) {
      downsample_ = register_module(
          "downsample", nn::Sequential(conv(inplanes, planes * kExpansion, 1, stride),
                                       nn::BatchNorm2d(planes * kExpansion)));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    torch::Tensor identity = downsample_ ? downsample_->forward(x) : x;
    torch::Tensor out = torch::relu(bn1_(conv1_(x)));
    out = torch::relu(bn2_(conv2_(out)));
    out = bn3_(conv3_(out));
    return torch::relu(out + identity);
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv3_;
  nn::BatchNorm2d bn3_;
  nn::Sequential downsample_{nullptr};
};

class ResNet50 : public Backbone {
 public:
  explicit ResNet50(HeadStyle head_style) : stacked_(head_style == HeadStyle::Stacked) {
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    bn1_ = register_module("bn1", nn::BatchNorm2d(64));
    layer1_ = register_module("layer1", make_layer(64, 3, 1));
    layer2_ = register_module("layer2", make_layer(128, 4, 2));
    layer3_ = register_module("layer3", make_layer(256, 6, 2));
    layer4_ = register_module("layer4", make_layer(512, 3, 2));
    fc_ = register_module("fc", nn::Linear(512 * Bottleneck::kExpansion, stacked_ ? 1000 : 1));
    if (stacked_) binary_head_ = register_module("binary_head", nn::Linear(1000, 1));
    init_conv_bn(*this);
  }

  torch::Tensor features(const torch::Tensor& x) override {
    torch::Tensor out = torch::relu(bn1_(conv1_(x)));
    out = torch::max_pool2d(out, 3, 2, 1);
    out = layer1_->forward(out);
    out = layer2_->forward(out);
    out = layer3_->forward(out);
    return layer4_->forward(out);
  }

  torch::Tensor head(const torch::Tensor& fmap) override {
    torch::Tensor out = fc_(global_pool(fmap));
    return stacked_ ? binary_head_(out) : out;
  }

 private:
  nn::Sequential make_layer(int64_t planes, int blocks, int64_t stride) {
    nn::Sequential seq;
    const bool downsample = stride != 1 || inplanes_ != planes * Bottleneck::kExpansion;
    seq->push_back(std::make_shared<Bottleneck>(inplanes_, planes, stride, downsample));
    inplanes_ = planes * Bottleneck::kExpansion;
    for (int i = 1; i < blocks; ++i) seq->push_back(std::make_shared<Bottleneck>(inplanes_, planes, 1, false));
    return seq;
  }

  bool stacked_;
  int64_t inplanes_ = 64;
  nn::Conv2d conv1_{nullptr};
  nn::BatchNorm2d bn1_{nullptr};
  nn::Sequential layer1_{nullptr}, layer2_{nullptr}, layer3_{nullptr}, layer4_{nullptr};
  nn::Linear fc_{nullptr};
  nn::Linear binary_head_{nullptr};
};

// DenseNet-121 -------------------------------------------------------------------

class DenseLayer : public nn::Module {
 public:
  DenseLayer(int64_t inputs, int64_t growth, int64_t bn_size)
      : norm1_(register_module("norm1", nn::BatchNorm2d(inputs))),
        conv1_(register_module("conv1", conv(inputs, bn_size * growth, 1))),
        norm2_(register_module("norm2", nn::BatchNorm2d(bn_size * growth))),
        conv2_(register_module("conv2", conv(bn_size * growth, growth, 3))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor out = conv1_(torch::relu(norm1_(x)));
    return conv2_(torch::relu(norm2_(out)));
  }

 private:
  nn::BatchNorm2d norm1_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d norm2_;
  nn::Conv2d conv2_;
};

class DenseBlock : public nn::Module {
 public:
  DenseBlock(int layers, int64_t inputs, int64_t growth, int64_t bn_size) {
    for (int i = 0; i < layers; ++i) {
      layers_.push_back(register_module(fmt::format("denselayer{}", i + 1),
                                        std::make_shared<DenseLayer>(inputs + i * growth, growth, bn_size)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> feats{x};
    for (auto& layer : layers_) feats.push_back(layer->forward(torch::cat(feats, 1)));
    return torch::cat(feats, 1);
  }

 private:
  std::vector<std::shared_ptr<DenseLayer>> layers_;
};

class Transition : public nn::Module {
 public:
  Transition(int64_t inputs, int64_t outputs)
      : norm_(register_module("norm", nn::BatchNorm2d(inputs))),
        conv_(register_module("conv", conv(inputs, outputs, 1))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    return torch::avg_pool2d(conv_(torch::relu(norm_(x))), 2, 2);
  }

 private:
  nn::BatchNorm2d norm_;
  nn::Conv2d conv_;
};

class DenseNetFeatures : public nn::Module {
 public:
  DenseNetFeatures() {
    constexpr int64_t kGrowth = 32;
    constexpr int64_t kBnSize = 4;
    constexpr std::array<int, 4> kBlocks = {6, 12, 24, 16};
    conv0_ = register_module("conv0", nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    norm0_ = register_module("norm0", nn::BatchNorm2d(64));
    int64_t channels = 64;
    for (std::size_t i = 0; i < kBlocks.size(); ++i) {
      blocks_.push_back(register_module(fmt::format("denseblock{}", i + 1),
                                        std::make_shared<DenseBlock>(kBlocks[i], channels, kGrowth, kBnSize)));
      channels += kBlocks[i] * kGrowth;
      if (i + 1 < kBlocks.size()) {
        transitions_.push_back(register_module(fmt::format("transition{}", i + 1),
                                               std::make_shared<Transition>(channels, channels / 2)));
        channels /= 2;
      }
    }
    norm5_ = register_module("norm5", nn::BatchNorm2d(channels));
    out_channels_ = channels;
  }

  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor out = torch::max_pool2d(torch::relu(norm0_(conv0_(x))), 3, 2, 1);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      out = blocks_[i]->forward(out);
      if (i < transitions_.size()) out = transitions_[i]->forward(out);
    }
    return norm5_(out);
  }

  int64_t out_channels() const { return out_channels_; }

 private:
  nn::Conv2d conv0_{nullptr};
  nn::BatchNorm2d norm0_{nullptr};
  std::vector<std::shared_ptr<DenseBlock>> blocks_;
  std::vector<std::shared_ptr<Transition>> transitions_;
  nn::BatchNorm2d norm5_{nullptr};
  int64_t out_channels_ = 0;
};

class DenseNet121 : public Backbone {
 public:
  explicit DenseNet121(HeadStyle head_style) : stacked_(head_style == HeadStyle::Stacked) {
    features_ = register_module("features", std::make_shared<DenseNetFeatures>());
    classifier_ = register_module("classifier", nn::Linear(features_->out_channels(), stacked_ ? 1000 : 1));
    if (stacked_) binary_head_ = register_module("binary_head", nn::Linear(1000, 1));
    init_conv_bn(*this);
    nn::init::zeros_(classifier_->bias);
  }

  torch::Tensor features(const torch::Tensor& x) override {
    return torch::relu(features_->forward(x));
  }

  torch::Tensor head(const torch::Tensor& fmap) override {
    torch::Tensor out = classifier_(global_pool(fmap));
    return stacked_ ? binary_head_(out) : out;
  }

 private:
  bool stacked_;
  std::shared_ptr<DenseNetFeatures> features_;
  nn::Linear classifier_{nullptr};
  nn::Linear binary_head_{nullptr};
};

// EfficientNet-B0 ----------------------------------------------------------------

// nn::Sequential with a concrete forward so it can nest inside another one.
class ChainImpl : public nn::SequentialImpl {
 public:
  using nn::SequentialImpl::SequentialImpl;
  torch::Tensor forward(const torch::Tensor& x) { return nn::SequentialImpl::forward(x); }
};
TORCH_MODULE(Chain);

Chain conv_norm_act(int64_t in, int64_t out, int64_t k, int64_t stride = 1,
                             int64_t groups = 1, bool activation = true) {
  Chain seq(conv(in, out, k, stride, groups), nn::BatchNorm2d(out));
  if (activation) seq->push_back(nn::SiLU());
  return seq;
}

class SqueezeExcitation : public nn::Module {
 public:
  SqueezeExcitation(int64_t channels, int64_t squeeze)
      : fc1_(register_module("fc1", nn::Conv2d(nn::Conv2dOptions(channels, squeeze, 1)))),
        fc2_(register_module("fc2", nn::Conv2d(nn::Conv2dOptions(squeeze, channels, 1)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor scale = torch::adaptive_avg_pool2d(x, {1, 1});
    scale = torch::sigmoid(fc2_(torch::silu(fc1_(scale))));
    return x * scale;
  }

 private:
  nn::Conv2d fc1_;
  nn::Conv2d fc2_;
};

class MBConv : public nn::Module {
 public:
  MBConv(int64_t expand_ratio, int64_t kernel, int64_t stride, int64_t in, int64_t out,
         double stochastic_depth)
      : use_residual_(stride == 1 && in == out), drop_prob_(stochastic_depth) {
    Chain block;
    const int64_t expanded = in * expand_ratio;
    if (expanded != in) block->push_back(conv_norm_act(in, expanded, 1));
    block->push_back(conv_norm_act(expanded, expanded, kernel, stride, expanded));
    block->push_back(std::make_shared<SqueezeExcitation>(expanded, std::max<int64_t>(1, in / 4)));
    block->push_back(conv_norm_act(expanded, out, 1, 1, 1, /*activation=*/false));
    block_ = register_module("block", block);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor result = block_->forward(x);
    if (!use_residual_) return result;
    if (is_training() && drop_prob_ > 0.0) {
      // Per-sample stochastic depth.
      const double survival = 1.0 - drop_prob_;
      torch::Tensor keep = torch::empty({x.size(0), 1, 1, 1}, x.options()).bernoulli_(survival);
      result = result * keep / survival;
    }
    return result + x;
  }

 private:
  bool use_residual_;
  double drop_prob_;
  Chain block_{nullptr};
};

class EfficientNetB0 : public Backbone {
 public:
  explicit EfficientNetB0(HeadStyle head_style) : stacked_(head_style == HeadStyle::Stacked) {
    struct Stage {
      int64_t expand, kernel, stride, in, out;
      int layers;
    };
    constexpr std::array<Stage, 7> kStages = {{{1, 3, 1, 32, 16, 1},
                                               {6, 3, 2, 16, 24, 2},
                                               {6, 5, 2, 24, 40, 2},
                                               {6, 3, 2, 40, 80, 3},
                                               {6, 5, 1, 80, 112, 3},
                                               {6, 5, 2, 112, 192, 4},
                                               {6, 3, 1, 192, 320, 1}}};
    constexpr double kStochasticDepth = 0.2;
    int total_blocks = 0;
    for (const auto& s : kStages) total_blocks += s.layers;

    nn::Sequential features;
    features->push_back(conv_norm_act(3, 32, 3, 2));
    int block_id = 0;
    for (const auto& s : kStages) {
      Chain stage;
      for (int i = 0; i < s.layers; ++i) {
        const double sd = kStochasticDepth * block_id / total_blocks;
        stage->push_back(std::make_shared<MBConv>(s.expand, s.kernel, i == 0 ? s.stride : 1, i == 0 ? s.in : s.out,
                                s.out, sd));
        ++block_id;
      }
      features->push_back(stage);
    }
    features->push_back(conv_norm_act(320, 1280, 1));
    features_ = register_module("features", features);
    classifier_ = register_module(
        "classifier", nn::Sequential(nn::Dropout(nn::DropoutOptions(0.2)), nn::Linear(1280, stacked_ ? 1000 : 1)));
    if (stacked_) binary_head_ = register_module("binary_head", nn::Linear(1000, 1));

    init_conv_bn(*this);
    for (auto& m : classifier_->modules(false)) {
      if (auto* lin = m->as<nn::Linear>()) {
        const double range = 1.0 / std::sqrt(static_cast<double>(lin->options.out_features()));
        nn::init::uniform_(lin->weight, -range, range);
        nn::init::zeros_(lin->bias);
      }
    }
  }

  torch::Tensor features(const torch::Tensor& x) override { return features_->forward(x); }

  torch::Tensor head(const torch::Tensor& fmap) override {
    torch::Tensor out = classifier_->forward(global_pool(fmap));
    return stacked_ ? binary_head_(out) : out;
  }

 private:
  bool stacked_;
  nn::Sequential features_{nullptr};
  nn::Sequential classifier_{nullptr};
  nn::Linear binary_head_{nullptr};
};

// TinyConv -----------------------------------------------------------------------

// conv(1->4, 3x3) + SiLU, conv(4->8, 3x3, stride 2) + SiLU, global mean,
// linear(8->1): 4*(9+1) + 8*(36+1) + (8+1) = 345 parameters.
class TinyConv : public Backbone {
 public:
  TinyConv()
      : conv1_(register_module("conv1", conv(1, 4, 3, 1, 1, /*bias=*/true))),
        conv2_(register_module("conv2", conv(4, 8, 3, 2, 1, /*bias=*/true))),
        fc_(register_module("fc", nn::Linear(8, 1))) {}

  torch::Tensor features(const torch::Tensor& x) override {
    return torch::silu(conv2_(torch::silu(conv1_(x))));
  }

  torch::Tensor head(const torch::Tensor& fmap) override { return fc_(global_pool(fmap)); }

 private:
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
  nn::Linear fc_;
};

}  // namespace

std::shared_ptr<Backbone> make_backbone(const ModelConfig& config) {
  torch::manual_seed(config.init_seed);
  switch (config.backbone) {
    case BackboneKind::ResNet50: return std::make_shared<ResNet50>(config.head);
    case BackboneKind::DenseNet121: return std::make_shared<DenseNet121>(config.head);
    case BackboneKind::EfficientNetB0: return std::make_shared<EfficientNetB0>(config.head);
    case BackboneKind::TinyConv: return std::make_shared<TinyConv>();
  }
  throw ValidationError("unknown backbone");
}

std::vector<std::string> head_prefixes(const ModelConfig& config) {
  const bool stacked = config.head == HeadStyle::Stacked;
  switch (config.backbone) {
    case BackboneKind::ResNet50:
      return stacked ? std::vector<std::string>{"binary_head."} : std::vector<std::string>{"fc."};
    case BackboneKind::DenseNet121:
      return stacked ? std::vector<std::string>{"binary_head."}
                     : std::vector<std::string>{"classifier."};
    case BackboneKind::EfficientNetB0:
      return stacked ? std::vector<std::string>{"binary_head."}
                     : std::vector<std::string>{"classifier."};
    case BackboneKind::TinyConv: return {"fc."};
  }
  return {};
}

}  // namespace efcxr::models
