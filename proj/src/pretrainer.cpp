#include "ssm/pretrainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "ssm/charset.hpp"
#include "ssm/datagen.hpp"

namespace ssm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::HS: return "HS";
    case InputMode::VS: return "VS";
    case InputMode::RS: return "RS";
    case InputMode::Mixed: return "mixed";
    case InputMode::NoiseBlur: return "noise_blur";
    case InputMode::OtherImage: return "other_image";
  }
  return "?";
}

InputMode parse_input_mode(std::string_view name) {
  if (name == "HS") return InputMode::HS;
  if (name == "VS") return InputMode::VS;
  if (name == "RS") return InputMode::RS;
  if (name == "mixed") return InputMode::Mixed;
  if (name == "noise_blur") return InputMode::NoiseBlur;
  if (name == "other_image") return InputMode::OtherImage;
  throw std::invalid_argument("unknown input mode '" + std::string(name) +
                              "' (expected HS, VS, RS, mixed, noise_blur or other_image)");
}

void PretrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument("pretrain config: " + msg); };
  if (epochs < 0 || warmup_epochs < 0) fail("epochs must be non-negative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (base_lr < 0 || min_lr < 0) fail("learning rates must be non-negative");
  if (ema_momentum < 0 || ema_momentum > 1) fail("ema_momentum must lie in [0, 1]");
  if (tau <= 0) fail("tau must be positive");
  if (alpha < 0) fail("alpha must be non-negative");
  if (!use_pixel_branch && !use_feature_branch) fail("at least one of the pixel and feature branches must be on");
  if (use_feature_branch && !use_dis && !use_den) fail("feature branch needs at least one of use_dis, use_den");
  if (max_images < 0) fail("max_images must be non-negative");
}

json PretrainConfig::to_json() const {
  return json{{"model", model.to_json()},
              {"epochs", epochs},
              {"warmup_epochs", warmup_epochs},
              {"base_lr", base_lr},
              {"min_lr", min_lr},
              {"schedule", "cosine"},
              {"batch_size", batch_size},
              {"weight_decay", weight_decay},
              {"beta1", beta1},
              {"beta2", beta2},
              {"ema_momentum", ema_momentum},
              {"alpha", alpha},
              {"tau", tau},
              {"grad_clip", grad_clip},
              {"input_mode", to_string(input_mode)},
              {"use_regressor", use_regressor},
              {"use_pixel_branch", use_pixel_branch},
              {"use_feature_branch", use_feature_branch},
              {"use_irregular_view", use_irregular_view},
              {"use_projector", use_projector},
              {"use_dis", use_dis},
              {"use_den", use_den},
              {"same_image_negatives", same_image_negatives},
              {"weak", {{"blur_prob", weak.blur_prob},
                        {"blur_sigma_min", weak.blur_sigma_min},
                        {"blur_sigma_max", weak.blur_sigma_max},
                        {"grayscale_prob", weak.grayscale_prob},
                        {"brightness_prob", weak.brightness_prob},
                        {"brightness_delta", weak.brightness_delta}}},
              {"geometric", {{"perspective_prob", geometric.perspective_prob},
                             {"max_rotation_deg", geometric.max_rotation_deg},
                             {"max_shear_deg", geometric.max_shear_deg},
                             {"scale_min", geometric.scale_min},
                             {"scale_max", geometric.scale_max},
                             {"max_corner_shift", geometric.max_corner_shift}}},
              {"noise_sigma", noise_sigma},
              {"noise_blur_sigma", noise_blur_sigma},
              {"max_images", max_images},
              {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const json& j) {
  PretrainConfig c;
  c.model = nn::ModelConfig::from_json(j.at("model"));
  c.epochs = j.at("epochs");
  c.warmup_epochs = j.at("warmup_epochs");
  c.base_lr = j.at("base_lr");
  c.min_lr = j.at("min_lr");
  c.batch_size = j.at("batch_size");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.ema_momentum = j.at("ema_momentum");
  c.alpha = j.at("alpha");
  c.tau = j.at("tau");
  c.grad_clip = j.at("grad_clip");
  c.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
  c.use_regressor = j.at("use_regressor");
  c.use_pixel_branch = j.at("use_pixel_branch");
  c.use_feature_branch = j.at("use_feature_branch");
  c.use_irregular_view = j.at("use_irregular_view");
  c.use_projector = j.at("use_projector");
  c.use_dis = j.at("use_dis");
  c.use_den = j.at("use_den");
  c.same_image_negatives = j.at("same_image_negatives");
  const auto& w = j.at("weak");
  c.weak = {w.at("blur_prob"), w.at("blur_sigma_min"), w.at("blur_sigma_max"),
            w.at("grayscale_prob"), w.at("brightness_prob"), w.at("brightness_delta")};
  const auto& g = j.at("geometric");
  c.geometric = {g.at("perspective_prob"), g.at("max_rotation_deg"), g.at("max_shear_deg"),
                 g.at("scale_min"), g.at("scale_max"), g.at("max_corner_shift")};
  c.noise_sigma = j.at("noise_sigma");
  c.noise_blur_sigma = j.at("noise_blur_sigma");
  c.max_images = j.at("max_images");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

void ema_update(torch::nn::Module& target, const torch::nn::Module& online, double momentum) {
  torch::NoGradGuard no_grad;
  const auto online_params = online.named_parameters(true);
  for (auto& item : target.named_parameters(true)) {
    const torch::Tensor* src = online_params.find(item.key());
    if (src == nullptr) throw std::invalid_argument("ema_update: online branch lacks '" + item.key() + "'");
    if (src->sizes() != item.value().sizes()) {
      throw std::invalid_argument("ema_update: shape mismatch for '" + item.key() + "'");
    }
    // Two separately rounded products, no fused multiply-add: the recurrence replays bit-exactly.
    item.value().mul_(momentum).add_(src->mul(1.0 - momentum));
  }
}

PretrainBatch collate(const std::vector<SuperimposedSample>& samples) {
  TORCH_CHECK(!samples.empty(), "empty batch");
  std::vector<const Image*> s_reg, reg, r_reg, s_irr;
  std::vector<int64_t> ip, in;
  for (const auto& s : samples) {
    s_reg.push_back(&s.x_s_reg);
    reg.push_back(&s.x_reg);
    r_reg.push_back(&s.x_r_reg);
    s_irr.push_back(&s.x_s_irr);
    ip.push_back(s.i_p.value());
    in.push_back(s.i_n.value());
  }
  PretrainBatch b;
  b.x_s_reg = nn::images_to_tensor(s_reg);
  b.x_reg = nn::images_to_tensor(reg);
  b.x_r_reg = nn::images_to_tensor(r_reg);
  b.x_s_irr = nn::images_to_tensor(s_irr);
  b.i_p = torch::tensor(ip, torch::kInt64);
  b.i_n = torch::tensor(in, torch::kInt64);
  return b;
}

Pretrainer::Pretrainer(PretrainConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  nn::BranchOptions online_opts{true, config_.use_regressor, config_.use_projector};
  nn::BranchOptions target_opts{false, config_.use_regressor, config_.use_projector};
  online_ = nn::Branch(config_.model, online_opts);
  target_ = nn::Branch(config_.model, target_opts);
  ema_update(*target_, *online_, 0.0);
  for (auto& p : target_->parameters()) p.set_requires_grad(false);
  optimizer_ = std::make_unique<AdamW>(nn::named_parameters(*online_),
                                       AdamWOptions{config_.beta1, config_.beta2, 1e-8, config_.weight_decay});
}

std::vector<SuperimposedSample> Pretrainer::make_samples(const std::vector<const Image*>& images, Rng& rng) const {
  SuperimposeOptions opts{config_.weak, config_.geometric, config_.use_irregular_view};
  std::vector<SuperimposedSample> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    switch (config_.input_mode) {
      case InputMode::HS: out.push_back(make_superimposed(img, InversionKind::HFlip, opts, rng)); break;
      case InputMode::VS: out.push_back(make_superimposed(img, InversionKind::VFlip, opts, rng)); break;
      case InputMode::RS: out.push_back(make_superimposed(img, InversionKind::Rotate180, opts, rng)); break;
      case InputMode::Mixed: out.push_back(make_superimposed(img, std::nullopt, opts, rng)); break;
      case InputMode::NoiseBlur: {
        Image noisy = img;
        std::normal_distribution<float> noise(0.0f, static_cast<float>(config_.noise_sigma));
        for (float& v : noisy.data()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
        out.push_back(make_superimposed_with(img, gaussian_blur(noisy, config_.noise_blur_sigma),
                                             DirectionIndex(1), opts, rng));
        break;
      }
      case InputMode::OtherImage: {
        std::size_t j = i;
        if (images.size() > 1) {
          std::uniform_int_distribution<std::size_t> pick(0, images.size() - 2);
          j = pick(rng);
          if (j >= i) ++j;
        }
        out.push_back(make_superimposed_with(img, *images[j], DirectionIndex(1), opts, rng));
        break;
      }
    }
  }
  return out;
}

Pretrainer::Forward Pretrainer::forward(const PretrainBatch& batch) {
  const auto dtype = online_->encoder->pos_embed.scalar_type();
  auto as = [&](const torch::Tensor& t) { return t.to(dtype); };
  Forward f;
  auto zero = torch::zeros({}, torch::TensorOptions().dtype(dtype));
  auto latent = online_->encode(as(batch.x_s_reg));
  auto [f_p, f_n] = online_->decouple(latent, batch.i_p, batch.i_n);

  f.l_pix = zero;
  if (config_.use_pixel_branch) {
    f.pred_p = online_->reconstruct(f_p);
    f.pred_n = online_->reconstruct(f_n);
    f.l_pix = loss_pix(f.pred_p, f.pred_n, as(batch.x_reg), as(batch.x_r_reg));
  }
  f.l_dis = zero;
  f.l_den = zero;
  if (config_.use_feature_branch) {
    auto q_p = online_->windows(f_p);
    auto q_n = online_->windows(f_n);
    torch::Tensor k_p, k_n;
    {
      torch::NoGradGuard no_grad;
      auto t_latent = target_->encode(as(batch.x_s_irr));
      auto [t_p, t_n] = target_->decouple(t_latent, batch.i_p, batch.i_n);
      k_p = target_->windows(t_p);
      k_n = target_->windows(t_n);
    }
    if (config_.use_dis) {
      f.l_dis = loss_dis(q_p, q_n, k_p, k_n, DiscriminativeOptions{config_.tau, config_.same_image_negatives});
    }
    if (config_.use_den) f.l_den = loss_den(q_p, q_n, k_p, k_n);
  }
  f.total = combine_losses(f.l_pix, f.l_dis, f.l_den, config_.alpha);
  return f;
}

LossBreakdown Pretrainer::step(const PretrainBatch& batch, double lr) {
  optimizer_->zero_grad();
  Forward f = forward(batch);
  const double l_pix = f.l_pix.item<double>();
  const double l_dis = f.l_dis.item<double>();
  const double l_den = f.l_den.item<double>();
  std::string bad;
  if (!std::isfinite(l_pix)) bad += " l_pix";
  if (!std::isfinite(l_dis)) bad += " l_dis";
  if (!std::isfinite(l_den)) bad += " l_den";
  if (!bad.empty()) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_) + " in:" + bad);
  }
  f.total.backward();
  clip_grad_norm(online_->parameters(), config_.grad_clip);
  optimizer_->step(lr);
  ema_update(*target_, *online_, config_.ema_momentum);
  ++step_;
  return loss_total(l_pix, l_dis, l_den, config_.alpha, config_.tau);
}

Checkpoint Pretrainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = json{{"kind", "pretrain"},
                   {"config", config_.to_json()},
                   {"step", step_},
                   {"epoch", epoch_},
                   {"charset_id", std::string(Charset::kId)},
                   {"rng_state", rng_state}};
  ckpt.put_module("online", *online_);
  ckpt.put_module("target", *target_);
  optimizer_->save(ckpt, "optim.");
  return ckpt;
}

Pretrainer Pretrainer::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "pretrain") throw std::invalid_argument("not a pretraining checkpoint");
  Pretrainer t(PretrainConfig::from_json(ckpt.meta.at("config")));
  ckpt.load_module("online", *t.online_);
  ckpt.load_module("target", *t.target_);
  t.optimizer_->load(ckpt, "optim.");
  t.step_ = ckpt.meta.at("step");
  t.epoch_ = ckpt.meta.at("epoch");
  t.rng_state = ckpt.meta.value("rng_state", "");
  return t;
}

namespace {

std::vector<Image> load_pretrain_images(const fs::path& manifest_path, int max_images) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  if (manifest.charset_id != Charset::kId) {
    throw std::invalid_argument("manifest charset '" + manifest.charset_id + "' is not " + std::string(Charset::kId));
  }
  std::vector<Image> images;
  for (auto& item : load_dataset(manifest_path, Split::Pretrain)) {
    if (max_images > 0 && static_cast<int>(images.size()) >= max_images) break;
    images.push_back(std::move(item.image));
  }
  return images;
}

}  // namespace

PretrainRunResult pretrain_run(const PretrainConfig& config, const fs::path& manifest_path, const fs::path& out_dir,
                               const std::optional<fs::path>& resume, const json& run_config) {
  config.validate();
  const std::vector<Image> images = load_pretrain_images(manifest_path, config.max_images);
  if (images.empty() && config.epochs > 0) throw std::invalid_argument("manifest has no pretrain images");
  for (const auto& img : images) {
    if (img.height() != config.model.image_height || img.width() != config.model.image_width ||
        img.channels() != config.model.channels) {
      throw std::invalid_argument("dataset image size does not match the model configuration");
    }
  }

  std::optional<Pretrainer> trainer;
  Rng rng(record_seed(config.seed, 0x5353'4d00ULL));
  if (resume) {
    const Checkpoint ckpt = Checkpoint::load(*resume);
    if (ckpt.meta.value("kind", "") != "pretrain" || ckpt.meta.at("config") != config.to_json()) {
      throw std::invalid_argument("resume checkpoint " + resume->string() + " was written with a different config");
    }
    trainer.emplace(Pretrainer::from_checkpoint(ckpt));
    std::istringstream(trainer->rng_state) >> rng;
  } else {
    trainer.emplace(config);
  }

  fs::create_directories(out_dir);
  PretrainRunResult result;
  result.metrics_path = out_dir / "metrics.jsonl";
  std::ofstream metrics(result.metrics_path, resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics_path.string());

  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = steps_per_epoch * config.epochs;
  const int64_t warmup_steps = steps_per_epoch * config.warmup_epochs;

  auto save = [&](const fs::path& path) {
    std::ostringstream rs;
    rs << rng;
    trainer->rng_state = rs.str();
    Checkpoint ckpt = trainer->to_checkpoint();
    ckpt.meta["run_config"] = run_config;
    ckpt.save(path);
  };

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  for (int epoch = trainer->epoch(); epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    int64_t epoch_steps = 0;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      std::vector<const Image*> batch_images;
      for (int64_t k = start; k < std::min(n, start + config.batch_size); ++k) {
        batch_images.push_back(&images[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      }
      const PretrainBatch batch = collate(trainer->make_samples(batch_images, rng));
      const int64_t step = trainer->step_count();
      const double lr = warmup_cosine_lr(step, warmup_steps, total_steps, config.base_lr, config.min_lr);
      const LossBreakdown loss = trainer->step(batch, lr);
      metrics << json{{"step", step},       {"epoch", epoch},       {"lr", lr},
                      {"l_pix", loss.l_pix}, {"l_dis", loss.l_dis}, {"l_den", loss.l_den},
                      {"total", loss.total}}
                     .dump()
              << '\n';
      result.step_losses.push_back(loss);
      epoch_total += loss.total;
      ++epoch_steps;
    }
    metrics.flush();
    trainer->set_epoch(epoch + 1);
    const double mean_total = epoch_steps > 0 ? epoch_total / static_cast<double>(epoch_steps) : 0.0;
    result.epoch_mean_total.push_back(mean_total);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "pretrain epoch " << epoch + 1 << "/" << config.epochs << " mean total " << mean_total << " ("
              << secs << " s)\n";
    save(out_dir / "last.ckpt");
  }
  result.checkpoint_path = out_dir / "final.ckpt";
  save(result.checkpoint_path);
  return result;
}

std::pair<torch::Tensor, torch::Tensor> predict_pixels(Pretrainer& trainer, const PretrainBatch& batch) {
  if (!trainer.config().use_pixel_branch || !trainer.online()->pixel_decoder) {
    throw std::invalid_argument("checkpoint has no pixel branch");
  }
  torch::NoGradGuard no_grad;
  auto& online = trainer.online();
  const auto dtype = online->encoder->pos_embed.scalar_type();
  auto latent = online->encode(batch.x_s_reg.to(dtype));
  auto [f_p, f_n] = online->decouple(latent, batch.i_p, batch.i_n);
  return {online->reconstruct(f_p).to(torch::kFloat32), online->reconstruct(f_n).to(torch::kFloat32)};
}

namespace {

SuperimposeOptions clean_options() { return {WeakAugmentConfig::identity(), {}, false}; }

}  // namespace

int reconstruct_grid(Pretrainer& trainer, const std::vector<Image>& images, const std::vector<InversionKind>& kinds,
                     const fs::path& out_png) {
  if (images.empty() || kinds.empty()) throw std::invalid_argument("reconstruct_grid needs images and kinds");
  if (!trainer.config().use_pixel_branch) throw std::invalid_argument("checkpoint has no pixel branch");
  constexpr int kPanels = 4;
  constexpr int kGap = 2;
  const int h = images.front().height(), w = images.front().width(), c = images.front().channels();
  const int rows = static_cast<int>(images.size() * kinds.size());
  Image grid(rows * h + (rows - 1) * kGap, kPanels * w + (kPanels - 1) * kGap, c, 1.0f);

  Rng rng(0);
  int row = 0;
  int panels = 0;
  for (const auto& img : images) {
    for (InversionKind kind : kinds) {
      SuperimposedSample s = make_superimposed(img, kind, clean_options(), rng);
      auto [pred_p, pred_n] = predict_pixels(trainer, collate({s}));
      const std::array<Image, kPanels> cells{s.x_reg, s.x_s_reg, nn::tensor_to_image(pred_p[0]),
                                             nn::tensor_to_image(pred_n[0])};
      for (int col = 0; col < kPanels; ++col) {
        const Image& cell = cells[static_cast<std::size_t>(col)];
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) grid.at(row * (h + kGap) + y, col * (w + kGap) + x, ch) = cell.at(y, x, ch);
          }
        }
        ++panels;
      }
      ++row;
    }
  }
  write_png(grid, out_png);
  return panels;
}

double reconstruction_mse(Pretrainer& trainer, const std::vector<Image>& images, uint64_t seed) {
  Rng rng(seed);
  double sum = 0.0;
  int64_t count = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    std::vector<SuperimposedSample> samples;
    for (std::size_t i = start; i < std::min(images.size(), start + kChunk); ++i) {
      samples.push_back(make_superimposed(images[i], std::nullopt, clean_options(), rng));
    }
    const PretrainBatch batch = collate(samples);
    auto pred = predict_pixels(trainer, batch).first;
    sum += (pred - batch.x_reg).square().sum().item<double>();
    count += pred.numel();
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace ssm
