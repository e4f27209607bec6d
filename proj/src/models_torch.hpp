// Internal: libtorch side of the models module. Only models.cpp,
// backbones.cpp, checkpoint.cpp and training.cpp include this header.
#pragma once

#include <torch/torch.h>

#include <memory>
#include <span>
#include <vector>

#include "efcxr/models.hpp"

namespace efcxr::models {

/// A classifier split at its last convolutional feature map so the
/// attribution hooks can read activations and gradients there.
class Backbone : public torch::nn::Module {
 public:
  /// Input [N, C, H, W] -> last conv feature map [N, K, h, w].
  virtual torch::Tensor features(const torch::Tensor& x) = 0;
  /// Feature map -> logits [N, 1].
  virtual torch::Tensor head(const torch::Tensor& fmap) = 0;

  torch::Tensor forward(const torch::Tensor& x) { return head(features(x)); }
};

/// Returns the network for `config` with freshly initialised weights
/// (seeded from config.init_seed), in float32.
std::shared_ptr<Backbone> make_backbone(const ModelConfig& config);

struct Model::Impl {
  ModelConfig config;
  std::shared_ptr<Backbone> net;
  torch::Dtype dtype = torch::kFloat32;

  /// HWC images -> [N, C, H, W] tensor in the model dtype.
  torch::Tensor to_tensor(std::span<const Image> batch) const;
  torch::Tensor to_tensor(std::span<const Image* const> batch) const;
};

/// Named parameters followed by named buffers, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(torch::nn::Module& module);

/// Copies tensors found in `archive` into the module state by name. Entries
/// whose name starts with a prefix in `skip` are ignored; every other state
/// entry must be present with a matching shape.
void load_state(torch::nn::Module& module, const std::filesystem::path& archive,
                const std::vector<std::string>& skip);

/// Names of head tensors that are not part of the ImageNet backbone.
std::vector<std::string> head_prefixes(const ModelConfig& config);

}  // namespace efcxr::models
