#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ssm/checkpoint.hpp"
#include "ssm/imaging.hpp"
#include "ssm/model.hpp"
#include "ssm/objectives.hpp"
#include "ssm/optim.hpp"

namespace ssm {

enum class InputMode { HS, VS, RS, Mixed, NoiseBlur, OtherImage };

std::string to_string(InputMode mode);
InputMode parse_input_mode(std::string_view name);

struct PretrainConfig {
  nn::ModelConfig model = nn::ModelConfig::preset_config("nano");
  int epochs = 20;
  int warmup_epochs = 1;
  double base_lr = 5e-4;
  double min_lr = 0.0;
  int batch_size = 64;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double ema_momentum = 0.996;
  double alpha = 1.0;
  double tau = 0.2;
  double grad_clip = 1.0;
  InputMode input_mode = InputMode::Mixed;
  bool use_regressor = true;
  bool use_pixel_branch = true;
  bool use_feature_branch = true;
  bool use_irregular_view = true;
  bool use_projector = true;
  bool use_dis = true;
  bool use_den = true;
  bool same_image_negatives = true;
  WeakAugmentConfig weak;
  GeometricAugmentConfig geometric;
  double noise_sigma = 0.1;  // noise_blur mode: additive noise before blurring
  double noise_blur_sigma = 1.0;
  int max_images = 0;        // 0 = the whole pretrain split
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

// target <- m * target + (1 - m) * online for every parameter of target; names and shapes must match.
void ema_update(torch::nn::Module& target, const torch::nn::Module& online, double momentum);

struct PretrainBatch {
  torch::Tensor x_s_reg, x_reg, x_r_reg, x_s_irr;  // (B, C, H, W)
  torch::Tensor i_p, i_n;                          // (B,) int64
};

PretrainBatch collate(const std::vector<SuperimposedSample>& samples);

// Online branch (with pixel decoder) and EMA target branch (without), plus optimiser state.
class Pretrainer {
 public:
  explicit Pretrainer(PretrainConfig config);

  const PretrainConfig& config() const { return config_; }
  nn::Branch& online() { return online_; }
  nn::Branch& target() { return target_; }
  int64_t step_count() const { return step_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }

  // Superimposed samples for a batch of source images under the configured input mode.
  std::vector<SuperimposedSample> make_samples(const std::vector<const Image*>& images, Rng& rng) const;

  // Forward-only loss of the online objective; target keys are computed without gradient.
  struct Forward {
    torch::Tensor total, l_pix, l_dis, l_den;
    torch::Tensor pred_p, pred_n;
  };
  Forward forward(const PretrainBatch& batch);

  // One optimisation step at the given learning rate followed by the EMA update.
  LossBreakdown step(const PretrainBatch& batch, double lr);

  Checkpoint to_checkpoint() const;
  static Pretrainer from_checkpoint(const Checkpoint& ckpt);

  std::string rng_state;  // data-pipeline RNG snapshot stored with checkpoints

 private:
  PretrainConfig config_;
  nn::Branch online_{nullptr};
  nn::Branch target_{nullptr};
  std::unique_ptr<AdamW> optimizer_;
  int64_t step_ = 0;
  int epoch_ = 0;
};

struct PretrainRunResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::vector<LossBreakdown> step_losses;
  std::vector<double> epoch_mean_total;
};

// Full schedule over the pretrain split: warmup + cosine lr, metrics.jsonl, a checkpoint per epoch
// (last.ckpt, overwritten) and final.ckpt. Resuming from a checkpoint requires an identical config.
PretrainRunResult pretrain_run(const PretrainConfig& config, const std::filesystem::path& manifest_path,
                               const std::filesystem::path& out_dir,
                               const std::optional<std::filesystem::path>& resume = std::nullopt,
                               const nlohmann::json& run_config = nlohmann::json::object());

// Pixel predictions (original, inverted) for one superimposed batch.
std::pair<torch::Tensor, torch::Tensor> predict_pixels(Pretrainer& trainer, const PretrainBatch& batch);

// Grid with one row per (image, kind): GT | superimposed input | Pre. | Pre.-<kind>.
// Returns the number of panels written.
int reconstruct_grid(Pretrainer& trainer, const std::vector<Image>& images, const std::vector<InversionKind>& kinds,
                     const std::filesystem::path& out_png);

// Mean squared error of the original-view prediction against the clean original, no augmentation.
double reconstruction_mse(Pretrainer& trainer, const std::vector<Image>& images, uint64_t seed);

}  // namespace ssm
