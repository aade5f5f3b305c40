#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ssm/checkpoint.hpp"
#include "ssm/datagen.hpp"
#include "ssm/optim.hpp"
#include "ssm/pretrainer.hpp"
#include "test_util.hpp"

using namespace ssm;
using ssm::test::TempDir;

namespace {

PretrainConfig micro_config() {
  PretrainConfig c;
  c.model = nn::ModelConfig::preset_config("micro");
  c.batch_size = 4;
  c.epochs = 1;
  c.seed = 3;
  return c;
}

PretrainBatch random_batch(const Pretrainer& trainer, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> images;
  for (int i = 0; i < n; ++i) images.push_back(ssm::test::random_image(32, 128, 3, rng));
  std::vector<const Image*> ptrs;
  for (auto& im : images) ptrs.push_back(&im);
  return collate(trainer.make_samples(ptrs, rng));
}

std::map<std::string, torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : m.named_parameters(true)) out[item.key()] = item.value().detach().clone();
  return out;
}

}  // namespace

TEST(Ema, Examples) {
  torch::nn::Linear target(2, 2), online(2, 2);
  {
    torch::NoGradGuard g;
    target->weight.fill_(1.0);
    online->weight.fill_(0.0);
  }
  auto t0 = target->weight.clone();
  ema_update(*target, *online, 1.0);
  EXPECT_TRUE(torch::equal(target->weight, t0));
  ema_update(*target, *online, 0.99);
  const float oracle = 0.99f * 1.0f + 0.01f * 0.0f;
  EXPECT_FLOAT_EQ(target->weight[0][0].item<float>(), oracle);
  ema_update(*target, *online, 0.0);
  EXPECT_TRUE(torch::equal(target->weight, online->weight));
  torch::nn::Linear other(3, 2);
  EXPECT_THROW(ema_update(*target, *other, 0.5), std::invalid_argument);
}

TEST(Schedule, WarmupCosine) {
  // Oracle: linear ramp base*(t+1)/W, then half-cosine from base to min over the remaining steps.
  const double base = 5e-4;
  for (int t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(warmup_cosine_lr(t, 4, 20, base), base * (t + 1) / 4.0);
  EXPECT_DOUBLE_EQ(warmup_cosine_lr(4, 4, 20, base), base);
  EXPECT_NEAR(warmup_cosine_lr(12, 4, 20, base), base * 0.5, 1e-15);
  EXPECT_NEAR(warmup_cosine_lr(20, 4, 20, base), 0.0, 1e-15);
  EXPECT_NEAR(warmup_cosine_lr(20, 4, 20, base, 1e-5), 1e-5, 1e-15);
}

TEST(Schedule, OneCycle) {
  const double max_lr = 1e-4;
  EXPECT_NEAR(one_cycle_lr(0, 10, 100, max_lr), max_lr / 25.0, 1e-18);
  EXPECT_NEAR(one_cycle_lr(10, 10, 100, max_lr), max_lr, 1e-18);
  EXPECT_NEAR(one_cycle_lr(5, 10, 100, max_lr), (max_lr + max_lr / 25.0) / 2.0, 1e-15);
  EXPECT_NEAR(one_cycle_lr(100, 10, 100, max_lr), max_lr / 25.0 / 1e4, 1e-18);
}

TEST(AdamW, MatchesTorchAdamW) {
  torch::manual_seed(0);
  auto w_ours = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
  auto b_ours = torch::randn({3}, torch::kFloat64).requires_grad_(true);
  auto w_ref = w_ours.detach().clone().requires_grad_(true);
  auto b_ref = b_ours.detach().clone().requires_grad_(true);
  AdamW ours({{"fc.weight", w_ours}, {"fc.bias", b_ours}}, AdamWOptions{0.9, 0.95, 1e-8, 0.05});
  torch::optim::AdamW ref_w({w_ref}, torch::optim::AdamWOptions(1e-2).betas({0.9, 0.95}).eps(1e-8).weight_decay(0.05));
  torch::optim::AdamW ref_b({b_ref}, torch::optim::AdamWOptions(1e-2).betas({0.9, 0.95}).eps(1e-8).weight_decay(0.0));
  auto x = torch::randn({5, 4}, torch::kFloat64);
  for (int step = 0; step < 5; ++step) {
    ours.zero_grad();
    ref_w.zero_grad();
    ref_b.zero_grad();
    (torch::matmul(x, w_ours) + b_ours).pow(2).sum().backward();
    (torch::matmul(x, w_ref) + b_ref).pow(2).sum().backward();
    ours.step(1e-2);
    ref_w.step();
    ref_b.step();
  }
  EXPECT_TRUE(torch::allclose(w_ours, w_ref, 1e-10, 1e-12));
  EXPECT_TRUE(torch::allclose(b_ours, b_ref, 1e-10, 1e-12));
}

TEST(ClipGradNorm, GlobalNorm) {
  auto a = torch::zeros({2}).requires_grad_(true);
  auto b = torch::zeros({1}).requires_grad_(true);
  a.mutable_grad() = torch::tensor({3.0f, 0.0f});
  b.mutable_grad() = torch::tensor({4.0f});
  EXPECT_NEAR(clip_grad_norm({a, b}, 1.0), 5.0, 1e-6);
  EXPECT_NEAR(a.grad()[0].item<float>(), 0.6f, 1e-5);
  EXPECT_NEAR(b.grad()[0].item<float>(), 0.8f, 1e-5);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  TempDir dir("ckpt");
  Checkpoint c;
  c.meta = {{"kind", "test"}, {"x", 1}};
  c.put("a", torch::randn({2, 3}));
  c.put("b", torch::arange(5, torch::kInt64));
  c.put("c", torch::randn({4}, torch::kFloat64));
  c.save(dir.path() / "x.ckpt");
  const Checkpoint d = Checkpoint::load(dir.path() / "x.ckpt");
  EXPECT_EQ(d.meta, c.meta);
  for (const char* k : {"a", "b", "c"}) EXPECT_TRUE(torch::equal(d.get(k), c.get(k))) << k;
  EXPECT_THROW(d.get("a", {3, 2}), std::invalid_argument);
  EXPECT_FALSE(d.contains("zz"));
  {
    std::ofstream out(dir.path() / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_ANY_THROW(Checkpoint::load(dir.path() / "bad.ckpt"));
}

TEST(Pretrainer, TargetStartsAsOnlineCopyAndIsFrozen) {
  Pretrainer t(micro_config());
  const auto online = snapshot(*t.online());
  for (const auto& item : t.target()->named_parameters(true)) {
    EXPECT_FALSE(item.value().requires_grad());
    EXPECT_TRUE(torch::equal(item.value(), online.at(item.key()))) << item.key();
  }
}

TEST(Pretrainer, StopGradientAndEmaReplay) {
  auto cfg = micro_config();
  cfg.ema_momentum = 0.9;
  Pretrainer t(cfg);
  auto target = snapshot(*t.target());
  for (int s = 0; s < 3; ++s) {
    const auto batch = random_batch(t, 4, 100 + s);
    t.step(batch, 1e-3);
    for (const auto& item : t.target()->named_parameters(true)) {
      ASSERT_FALSE(item.value().grad().defined() && item.value().grad().abs().sum().item<double>() != 0.0)
          << item.key();
    }
    const auto online = snapshot(*t.online());
    for (auto& [name, v] : target) {
      // Replay of the recurrence, elementwise in float.
      auto tv = v.contiguous();
      auto ov = online.at(name).contiguous();
      float* tp = tv.data_ptr<float>();
      const float* op = ov.data_ptr<float>();
      const float m = 0.9f, one_minus = static_cast<float>(1.0 - 0.9);
      for (int64_t i = 0; i < tv.numel(); ++i) tp[i] = tp[i] * m + op[i] * one_minus;
      v = tv;
    }
    for (const auto& item : t.target()->named_parameters(true)) {
      ASSERT_TRUE(torch::equal(item.value(), target.at(item.key()))) << item.key();
    }
  }
}

TEST(Pretrainer, DeterministicLossBreakdown) {
  Pretrainer a(micro_config()), b(micro_config());
  const auto batch = random_batch(a, 4, 9);
  for (int s = 0; s < 2; ++s) {
    EXPECT_EQ(a.step(batch, 1e-3).to_json().dump(), b.step(batch, 1e-3).to_json().dump());
  }
}

TEST(Pretrainer, FeatureBranchDisabled) {
  auto cfg = micro_config();
  cfg.use_feature_branch = false;
  Pretrainer t(cfg);
  const auto loss = t.step(random_batch(t, 4, 1), 1e-3);
  EXPECT_EQ(loss.l_dis, 0.0);
  EXPECT_EQ(loss.l_den, 0.0);
  EXPECT_GT(loss.l_pix, 0.0);
}

TEST(Pretrainer, AlphaZeroIsPixelOnly) {
  auto cfg = micro_config();
  cfg.alpha = 0.0;
  Pretrainer t(cfg);
  const auto loss = t.step(random_batch(t, 4, 1), 1e-3);
  EXPECT_EQ(loss.total, loss.l_pix);
}

TEST(Pretrainer, ToggleValidation) {
  auto cfg = micro_config();
  cfg.use_pixel_branch = false;
  cfg.use_feature_branch = false;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = micro_config();
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(PretrainConfig::from_json(micro_config().to_json()).to_json(), micro_config().to_json());
}

TEST(Pretrainer, InputModes) {
  for (auto mode : {InputMode::HS, InputMode::VS, InputMode::RS, InputMode::Mixed, InputMode::NoiseBlur,
                    InputMode::OtherImage}) {
    auto cfg = micro_config();
    cfg.input_mode = mode;
    Pretrainer t(cfg);
    const auto batch = random_batch(t, 3, 5);
    auto in = batch.i_n;
    if (mode == InputMode::HS) {
      EXPECT_TRUE(torch::equal(in, torch::full({3}, 1, torch::kInt64)));
    }
    if (mode == InputMode::VS) {
      EXPECT_TRUE(torch::equal(in, torch::full({3}, 2, torch::kInt64)));
    }
    if (mode == InputMode::RS) {
      EXPECT_TRUE(torch::equal(in, torch::full({3}, 3, torch::kInt64)));
    }
    EXPECT_TRUE(std::isfinite(t.step(batch, 1e-3).total)) << to_string(mode);
    EXPECT_EQ(parse_input_mode(to_string(mode)), mode);
  }
}

TEST(Pretrainer, CheckpointResumeIsBitwise) {
  auto cfg = micro_config();
  Pretrainer a(cfg);
  const auto b1 = random_batch(a, 4, 1), b2 = random_batch(a, 4, 2);
  a.step(b1, 1e-3);
  TempDir dir("resume");
  a.to_checkpoint().save(dir.path() / "a.ckpt");
  Pretrainer b = Pretrainer::from_checkpoint(Checkpoint::load(dir.path() / "a.ckpt"));
  EXPECT_EQ(b.step_count(), 1);
  EXPECT_EQ(a.step(b2, 1e-3).to_json().dump(), b.step(b2, 1e-3).to_json().dump());
  const auto pa = snapshot(*a.online());
  for (const auto& [name, v] : snapshot(*b.online())) EXPECT_TRUE(torch::equal(v, pa.at(name))) << name;
}

TEST(PretrainRun, ZeroEpochsAndResume) {
  TempDir dir("prun");
  CorpusConfig corpus;
  corpus.n_pretrain = 8;
  corpus.n_labeled = 0;
  gen_corpus(corpus, dir.path() / "data");
  auto cfg = micro_config();
  cfg.epochs = 0;
  auto r0 = pretrain_run(cfg, dir.path() / "data" / "manifest.jsonl", dir.path() / "run0");
  EXPECT_TRUE(std::filesystem::exists(r0.checkpoint_path));
  EXPECT_EQ(std::filesystem::file_size(r0.metrics_path), 0u);
  auto p0 = Pretrainer::from_checkpoint(Checkpoint::load(r0.checkpoint_path));
  EXPECT_EQ(p0.step_count(), 0);

  cfg.epochs = 2;
  const auto manifest = dir.path() / "data" / "manifest.jsonl";
  auto full = pretrain_run(cfg, manifest, dir.path() / "full");
  EXPECT_EQ(full.step_losses.size(), 4u);
  EXPECT_EQ(full.epoch_mean_total.size(), 2u);
  // A finished run resumes to a no-op; a changed config is refused.
  auto resumed = pretrain_run(cfg, manifest, dir.path() / "resumed", dir.path() / "full" / "final.ckpt");
  EXPECT_TRUE(resumed.step_losses.empty());
  auto other = cfg;
  other.base_lr *= 2;
  EXPECT_THROW(pretrain_run(other, manifest, dir.path() / "x", dir.path() / "full" / "final.ckpt"),
               std::invalid_argument);
}

TEST(Reconstruct, GridPanelsAndMse) {
  TempDir dir("recon");
  Pretrainer t(micro_config());
  Rng rng(1);
  std::vector<Image> imgs{ssm::test::random_image(32, 128, 3, rng)};
  EXPECT_EQ(reconstruct_grid(t, imgs, {InversionKind::HFlip}, dir.path() / "g.png"), 4);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "g.png"));
  imgs.push_back(ssm::test::random_image(32, 128, 3, rng));
  EXPECT_EQ(reconstruct_grid(t, imgs, {InversionKind::HFlip, InversionKind::Rotate180}, dir.path() / "h.png"), 16);
  EXPECT_TRUE(std::isfinite(reconstruction_mse(t, imgs, 1)));
}
