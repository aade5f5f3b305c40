#include <gtest/gtest.h>

#include "ssm/model.hpp"

using namespace ssm;
using namespace ssm::nn;

TEST(ModelConfig, PresetsAndJson) {
  const auto nano = ModelConfig::preset_config("nano");
  EXPECT_EQ(nano.tokens(), 256);
  EXPECT_EQ(nano.patch_values(), 48);
  const auto gc = ModelConfig::preset_config("gradcheck");
  EXPECT_EQ(gc.tokens(), 8);
  EXPECT_EQ(gc.dim, 16);
  EXPECT_EQ(gc.depth, 2);
  const auto back = ModelConfig::from_json(nano.to_json());
  EXPECT_EQ(back.to_json(), nano.to_json());
  EXPECT_THROW(ModelConfig::preset_config("huge"), std::invalid_argument);
  ModelConfig bad = nano;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Patchify, InverseAndLayout) {
  auto x = torch::rand({2, 3, 8, 12});
  auto tokens = patchify(x, 4);
  ASSERT_EQ(tokens.sizes(), (std::vector<int64_t>{2, 6, 48}));
  EXPECT_TRUE(torch::equal(unpatchify(tokens, 4, 8, 12, 3), x));
  // Token 1 is the patch at grid (0, 1); its first entry is pixel (0, 4) channel 0, then channel 1.
  EXPECT_EQ(tokens[0][1][0].item<float>(), x[0][0][0][4].item<float>());
  EXPECT_EQ(tokens[0][1][1].item<float>(), x[0][1][0][4].item<float>());
}

TEST(Encoder, TokenCounts) {
  torch::NoGradGuard g;
  auto nano = ModelConfig::preset_config("nano");
  VitEncoder enc(nano);
  EXPECT_EQ(enc->forward(torch::rand({1, 3, 32, 128})).sizes(), (std::vector<int64_t>{1, 256, 192}));
  auto gc = ModelConfig::preset_config("gradcheck");
  VitEncoder small(gc);
  EXPECT_EQ(small->forward(torch::rand({2, 3, 8, 16})).sizes(), (std::vector<int64_t>{2, 8, 16}));
}

TEST(Encoder, ZeroImageZeroResidualFinite) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("micro");
  VitEncoder enc(cfg);
  auto last = enc->blocks[cfg.depth - 1]->as<BlockImpl>();
  last->attn->proj->weight.zero_();
  last->mlp->fc2->weight.zero_();
  auto out = enc->forward(torch::zeros({1, 3, 32, 128}));
  EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
}

TEST(Prompt, DistinctAndDeterministic) {
  torch::NoGradGuard g;
  PromptGenerator gen(32);
  auto a = gen->forward(DirectionIndex(0));
  auto b = gen->forward(DirectionIndex(1));
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{32}));
  EXPECT_FALSE(torch::equal(a, b));
  EXPECT_TRUE(torch::equal(a, gen->forward(DirectionIndex(0))));
  auto batch = gen->forward(torch::tensor({0, 1}, torch::kInt64));
  EXPECT_TRUE(torch::allclose(batch[1], b));
}

TEST(Regressor, ShapeAndPromptConditioning) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("micro");
  Branch branch(cfg, BranchOptions{});
  auto feats = torch::randn({2, cfg.tokens(), cfg.dim});
  auto [fp, fn] = branch->decouple(feats, torch::tensor({0, 0}, torch::kInt64), torch::tensor({1, 3}, torch::kInt64));
  EXPECT_EQ(fp.sizes(), feats.sizes());
  EXPECT_FALSE(torch::allclose(fp, fn));
}

TEST(Regressor, DepthZeroIsIdentity) {
  torch::NoGradGuard g;
  Regressor r(16, 0, 2, 4.0);
  auto feats = torch::randn({2, 8, 16});
  EXPECT_TRUE(torch::equal(r->forward(torch::randn({2, 16}), feats), feats));
  auto cfg = ModelConfig::preset_config("gradcheck");
  Branch branch(cfg, BranchOptions{true, false, true});
  auto [fp, fn] = branch->decouple(torch::randn({2, 8, 16}), torch::tensor({0, 0}, torch::kInt64),
                                   torch::tensor({1, 2}, torch::kInt64));
  EXPECT_TRUE(torch::equal(fp, fn));
}

TEST(PixelDecoder, ZeroWeightsGiveBiasImage) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("micro");
  PixelDecoder dec(cfg);
  dec->fc2->weight.zero_();
  // One constant per channel: the bias of that channel's entries in every patch.
  auto bias = torch::zeros({cfg.patch_values()});
  for (int i = 0; i < cfg.patch_values(); ++i) bias[i] = 0.1f * static_cast<float>(i % cfg.channels) + 0.2f;
  dec->fc2->bias.copy_(bias);
  auto img = dec->forward(torch::randn({2, cfg.tokens(), cfg.dim}));
  ASSERT_EQ(img.sizes(), (std::vector<int64_t>{2, 3, 32, 128}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_TRUE(torch::allclose(img.select(1, c), torch::full({2, 32, 128}, 0.1f * c + 0.2f)));
  }
}

TEST(Projector, PoolsColumnsWhenWindowsEqualGridWidth) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("gradcheck");
  cfg.projector.n_windows = cfg.grid_width();
  WindowProjector proj(cfg, true);
  auto feats = torch::randn({1, cfg.tokens(), cfg.dim});
  auto pooled = proj->pool(feats);
  ASSERT_EQ(pooled.sizes(), (std::vector<int64_t>{1, cfg.grid_width(), cfg.dim}));
  auto grid = feats.reshape({1, cfg.grid_height(), cfg.grid_width(), cfg.dim});
  for (int col = 0; col < cfg.grid_width(); ++col) {
    auto oracle = grid.select(2, col).mean(1);
    EXPECT_TRUE(torch::allclose(pooled.select(1, col), oracle, 1e-6, 1e-6));
  }
}

TEST(Projector, ConstantFeatsAndUnitNorm) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("micro");
  WindowProjector proj(cfg, true);
  auto out = proj->forward(torch::ones({1, cfg.tokens(), cfg.dim}) * 0.3);
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{1, cfg.projector.n_windows, cfg.projector.out_dim}));
  for (int w = 1; w < cfg.projector.n_windows; ++w) EXPECT_TRUE(torch::allclose(out[0][w], out[0][0]));
  auto rnd = proj->forward(torch::randn({3, cfg.tokens(), cfg.dim}));
  EXPECT_TRUE(torch::allclose(rnd.norm(2, -1), torch::ones({3, cfg.projector.n_windows}), 1e-5, 1e-5));
}

TEST(TextDecoder, ShapeAndFinite) {
  torch::NoGradGuard g;
  auto cfg = ModelConfig::preset_config("micro");
  TextRecognizer rec(cfg);
  auto logits = rec->forward(torch::rand({2, 3, 32, 128}));
  ASSERT_EQ(logits.sizes(), (std::vector<int64_t>{2, 25, 96}));
  EXPECT_TRUE(torch::isfinite(logits).all().item<bool>());
}

TEST(Branch, TargetHasNoPixelDecoderButSameSharedNames) {
  auto cfg = ModelConfig::preset_config("micro");
  Branch online(cfg, BranchOptions{true, true, true});
  Branch target(cfg, BranchOptions{false, true, true});
  std::map<std::string, std::vector<int64_t>> o;
  for (auto& [n, p] : named_parameters(*online)) o[n] = p.sizes().vec();
  for (auto& [n, p] : named_parameters(*target)) {
    ASSERT_TRUE(o.count(n)) << n;
    EXPECT_EQ(o[n], p.sizes().vec());
  }
  bool has_pixel = false;
  for (auto& [n, _] : named_parameters(*target)) has_pixel |= n.rfind("pixel_decoder", 0) == 0;
  EXPECT_FALSE(has_pixel);
}
