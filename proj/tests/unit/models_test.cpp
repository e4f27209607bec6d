#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "efcxr/models.hpp"
#include "efcxr/text.hpp"
#include "support/oracles.hpp"

using namespace efcxr;
using namespace efcxr::models;

namespace {

ModelConfig untrained(BackboneKind kind, HeadStyle head = HeadStyle::Stacked) {
  ModelConfig c;
  c.backbone = kind;
  c.pretrained = Pretrained::None;
  c.head = head;
  return c;
}

}  // namespace

TEST(Parameters, TinyConvClosedForm) {
  // conv 1->4 (3x3 + bias), conv 4->8 (3x3 + bias), linear 8->1.
  const std::int64_t closed = (1 * 9 + 1) * 4 + (4 * 9 + 1) * 8 + (8 + 1);
  EXPECT_EQ(closed, 345);
  EXPECT_EQ(count_parameters(ModelConfig::tiny()), closed);
  EXPECT_EQ(count_parameters(build_model(ModelConfig::tiny(16, 16))), closed);
}

TEST(Parameters, TorchvisionCounts) {
  // torchvision 1000-way totals plus the binary head.
  EXPECT_EQ(count_parameters(untrained(BackboneKind::ResNet50)), 25'557'032 + 1001);
  EXPECT_EQ(count_parameters(untrained(BackboneKind::DenseNet121)), 7'978'856 + 1001);
  EXPECT_EQ(count_parameters(untrained(BackboneKind::EfficientNetB0)), 5'288'548 + 1001);
  EXPECT_EQ(count_parameters(untrained(BackboneKind::ResNet50, HeadStyle::Replaced)), 25'557'032 - 2'049'000 + 2049);
  EXPECT_EQ(count_parameters(untrained(BackboneKind::DenseNet121, HeadStyle::Replaced)), 7'978'856 - 1'025'000 + 1025);
  EXPECT_EQ(count_parameters(untrained(BackboneKind::EfficientNetB0, HeadStyle::Replaced)),
            5'288'548 - 1'281'000 + 1281);
}

TEST(Shapes, ResNet50Contract) {
  Model m = build_model(untrained(BackboneKind::ResNet50));
  m.set_training(false);
  EXPECT_EQ(m.input_channels(), 3);
  EXPECT_EQ(m.last_conv_size(), (std::pair<int, int>{7, 7}));
  std::vector<Image> batch(2, Image(224, 224, 3, 0.5));
  batch[1].at(100, 100, 1) = 1.0;
  const auto z = m.logits(batch);
  ASSERT_EQ(z.size(), 2u);
  for (double v : z) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(last_conv_layer(BackboneKind::ResNet50), "layer4");
}

TEST(Shapes, MismatchNamesExpectedAndGot) {
  Model m = build_model(ModelConfig::tiny(16, 16));
  m.set_training(false);
  std::vector<Image> bad{Image(16, 17, 1)};
  try {
    m.logits(bad);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("16x16x1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("16x17x1"), std::string::npos) << msg;
  }
}

TEST(Shapes, ImageNetBackbonesNeedMultiplesOf32) {
  ModelConfig c = untrained(BackboneKind::DenseNet121);
  c.input_height = 200;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Init, SameSeedSameWeights) {
  ModelConfig c = ModelConfig::tiny(16, 16);
  c.init_seed = 11;
  const Model a = build_model(c), b = build_model(c);
  c.init_seed = 12;
  const Model other = build_model(c);
  for (const auto& p : a.parameters()) EXPECT_EQ(a.parameter_values(p.name), b.parameter_values(p.name)) << p.name;
  EXPECT_NE(a.parameter_values("conv1.weight"), other.parameter_values("conv1.weight"));
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  // 1 - 1e-20 rounds to 1.0 in double; check the gap instead.
  EXPECT_LT(1.0 - sigmoid(50.0), 1e-20);
  EXPECT_GT(sigmoid(-50.0), 0.0);
  EXPECT_LE(sigmoid(50.0), 1.0);
  EXPECT_GE(sigmoid(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
  EXPECT_NEAR(sigmoid(-2.0), 1.0 / (1.0 + std::exp(2.0)), 1e-16);
}

TEST(Attribution, RequiresEvaluationMode) {
  Model m = build_model(ModelConfig::tiny(16, 16));
  ASSERT_TRUE(m.training());
  EXPECT_THROW(m.score_input_gradient(Image(16, 16, 1), Label::ReducedEF), ValidationError);
  m.set_training(false);
  EXPECT_NO_THROW(m.score_input_gradient(Image(16, 16, 1), Label::ReducedEF));
}

TEST(Pretrained, MissingSourceIsAnError) {
  ModelConfig c = untrained(BackboneKind::ResNet50);
  c.pretrained = Pretrained::ImageNet;
  try {
    build_model(c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("weights_path"), std::string::npos);
  }
  c.weights_path = "/nonexistent/resnet50.safetensors";
  EXPECT_THROW(build_model(c), ValidationError);
  ModelConfig tiny = ModelConfig::tiny();
  tiny.pretrained = Pretrained::ImageNet;
  EXPECT_THROW(build_model(tiny), ValidationError);
}

TEST(Pretrained, BackboneLoadedHeadLeftFresh) {
  const auto dir = oracle::scratch_dir("pretrained");
  ModelConfig src_cfg = untrained(BackboneKind::ResNet50);
  src_cfg.init_seed = 1;
  const Model src = build_model(src_cfg);
  save_checkpoint(src, dir / "src.safetensors");

  ModelConfig cfg = untrained(BackboneKind::ResNet50);
  cfg.init_seed = 2;
  const Model fresh = build_model(cfg);
  cfg.pretrained = Pretrained::ImageNet;
  cfg.weights_path = (dir / "src.safetensors").string();
  const Model loaded = build_model(cfg);
  EXPECT_EQ(loaded.parameter_values("conv1.weight"), src.parameter_values("conv1.weight"));
  EXPECT_EQ(loaded.parameter_values("fc.weight"), src.parameter_values("fc.weight"));
  EXPECT_EQ(loaded.parameter_values("binary_head.weight"), fresh.parameter_values("binary_head.weight"));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = oracle::scratch_dir("ckpt");
  ModelConfig c = ModelConfig::tiny(16, 16);
  c.init_seed = 5;
  Model m = build_model(c);
  m.set_training(false);
  const nlohmann::json state = {{"epoch", 3}, {"val_loss", 0.25}};
  save_checkpoint(m, dir / "a.ckpt", state);
  auto loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_FALSE(loaded.model.training());
  EXPECT_EQ(loaded.training_state, state);
  save_checkpoint(loaded.model, dir / "b.ckpt", loaded.training_state);
  EXPECT_EQ(text::read_file(dir / "a.ckpt"), text::read_file(dir / "b.ckpt"));

  std::mt19937_64 gen(1);
  std::vector<Image> batch{oracle::random_image(gen, 16, 16, 1)};
  EXPECT_EQ(m.logits(batch), loaded.model.logits(batch));
}

TEST(Checkpoint, CorruptArchiveIsRejected) {
  const auto dir = oracle::scratch_dir("ckpt_bad");
  std::ofstream(dir / "bad.ckpt") << "xx";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), SchemaError);
}

// torchvision archives --------------------------------------------------------------
//
// Needs archives written by tools/export_torchvision_weights.py --random-init
// --probe; ctest generates them into $EFCXR_TV_DIR when torchvision is
// importable.

namespace {

double probe_logit(const std::filesystem::path& archive) {
  const std::string bytes = text::read_file(archive);
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  const auto header = nlohmann::json::parse(bytes.substr(8, n));
  return std::stod(header.at("__metadata__").at("probe_logit0").get<std::string>());
}

void check_torchvision(BackboneKind kind, const char* file) {
  const char* dir = std::getenv("EFCXR_TV_DIR");
  if (!dir) GTEST_SKIP() << "EFCXR_TV_DIR not set";
  const std::filesystem::path archive = std::filesystem::path(dir) / file;
  ModelConfig c = untrained(kind);
  c.pretrained = Pretrained::ImageNet;
  c.weights_path = archive.string();
  c.precision = Precision::Float64;
  Model m = build_model(c);
  m.set_training(false);
  // Route ImageNet logit 0 straight through the binary head.
  std::vector<double> pick(1000, 0.0);
  pick[0] = 1.0;
  m.set_parameter("binary_head.weight", pick);
  m.set_parameter("binary_head.bias", std::vector<double>{0.0});
  Image x(224, 224, 3);
  for (int y = 0; y < 224; ++y)
    for (int xx = 0; xx < 224; ++xx)
      for (int ch = 0; ch < 3; ++ch) x.at(y, xx, ch) = ((3 * ch + 5 * y + 7 * xx) % 23) / 22.0;
  const double z = m.logits(std::span<const Image>(&x, 1))[0];
  EXPECT_NEAR(z, probe_logit(archive), 1e-6 * std::max(1.0, std::abs(z)));
}

}  // namespace

TEST(TorchvisionArchive, ResNet50ForwardMatches) { check_torchvision(BackboneKind::ResNet50, "resnet50.safetensors"); }
TEST(TorchvisionArchive, DenseNet121ForwardMatches) {
  check_torchvision(BackboneKind::DenseNet121, "densenet121.safetensors");
}
TEST(TorchvisionArchive, EfficientNetB0ForwardMatches) {
  check_torchvision(BackboneKind::EfficientNetB0, "efficientnet_b0.safetensors");
}
