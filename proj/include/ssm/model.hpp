#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ssm/imaging.hpp"

namespace ssm::nn {

struct ProjectorConfig {
  int n_windows = 4;
  int hidden_dim = 0;  // 0 means 2 * dim
  int out_dim = 128;
};

struct TextDecoderConfig {
  int depth = 6;
  int dim = 384;
  int heads = 6;
  int max_len = 25;
  int vocab = 96;
};

struct ModelConfig {
  std::string preset = "nano";
  int image_height = 32;
  int image_width = 128;
  int channels = 3;
  int patch = 4;
  int dim = 192;
  int depth = 6;
  int heads = 3;
  double mlp_ratio = 4.0;
  int regressor_depth = 4;
  int pixel_hidden = 0;  // 0 means dim
  ProjectorConfig projector;
  TextDecoderConfig decoder;

  int grid_height() const { return image_height / patch; }
  int grid_width() const { return image_width / patch; }
  int tokens() const { return grid_height() * grid_width(); }
  int patch_values() const { return patch * patch * channels; }
  int projector_hidden() const { return projector.hidden_dim > 0 ? projector.hidden_dim : 2 * dim; }

  void validate() const;

  // "nano" (d=192, depth 6), "tiny" (192, 12), "small" (384, 12), "micro" (64, 2) and
  // "gradcheck" (16, 2, 8x16 images).
  static ModelConfig preset_config(std::string_view name);

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Truncated normal (+-2 sigma) draw in place.
void trunc_normal_(torch::Tensor t, double std = 0.02);

// (B, C, H, W) -> (B, H/p * W/p, p*p*C); each token lists its patch as (row, col, channel).
torch::Tensor patchify(const torch::Tensor& images, int patch);
// Exact inverse of patchify.
torch::Tensor unpatchify(const torch::Tensor& tokens, int patch, int height, int width, int channels);

// (B, C, H, W) float tensor from a batch of images.
torch::Tensor images_to_tensor(const std::vector<Image>& images);
torch::Tensor images_to_tensor(const std::vector<const Image*>& images);
Image tensor_to_image(const torch::Tensor& chw);

struct MlpImpl : torch::nn::Module {
  MlpImpl(int in_dim, int hidden_dim, int out_dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

struct AttentionImpl : torch::nn::Module {
  AttentionImpl(int dim, int heads, int kv_dim = 0);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory);

  int heads;
  torch::nn::Linear q{nullptr}, kv{nullptr}, proj{nullptr};
};
TORCH_MODULE(Attention);

// Pre-norm transformer block.
struct BlockImpl : torch::nn::Module {
  BlockImpl(int dim, int heads, double mlp_ratio);
  torch::Tensor forward(torch::Tensor x);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  Attention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(Block);

struct VitEncoderImpl : torch::nn::Module {
  explicit VitEncoderImpl(const ModelConfig& cfg);
  // (B, C, H, W) -> (B, tokens, dim)
  torch::Tensor forward(const torch::Tensor& images);

  ModelConfig cfg;
  torch::nn::Linear patch_embed{nullptr};
  torch::Tensor pos_embed;
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(VitEncoder);

// Direction index -> prompt token: embedding, then Linear-LayerNorm-GELU-Linear.
struct PromptGeneratorImpl : torch::nn::Module {
  explicit PromptGeneratorImpl(int dim);
  // (B,) int64 -> (B, dim)
  torch::Tensor forward(const torch::Tensor& index);
  torch::Tensor forward(DirectionIndex index);

  torch::nn::Embedding embed{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PromptGenerator);

// Prepends the prompt, runs the blocks and drops the prompt position again.
// Depth 0 is the identity on the feature sequence.
struct RegressorImpl : torch::nn::Module {
  RegressorImpl(int dim, int depth, int heads, double mlp_ratio);
  // prompt (B, dim), feats (B, L, dim) -> (B, L, dim)
  torch::Tensor forward(const torch::Tensor& prompt, const torch::Tensor& feats);

  int depth;
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(Regressor);

// Two linear layers with GELU, one patch of pixels per token, un-patchified to (B, C, H, W).
struct PixelDecoderImpl : torch::nn::Module {
  explicit PixelDecoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& feats);

  ModelConfig cfg;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(PixelDecoder);

// Adaptive mean-pool of the token grid to (1, n_windows), optional 2-layer MLP, L2-normalised rows.
struct WindowProjectorImpl : torch::nn::Module {
  WindowProjectorImpl(const ModelConfig& cfg, bool use_mlp);
  // (B, L, dim) -> (B, n_windows, out_dim)
  torch::Tensor forward(const torch::Tensor& feats);
  torch::Tensor pool(const torch::Tensor& feats) const;

  ModelConfig cfg;
  bool use_mlp;
  Mlp mlp{nullptr};
};
TORCH_MODULE(WindowProjector);

struct DecoderBlockImpl : torch::nn::Module {
  DecoderBlockImpl(int dim, int heads, double mlp_ratio, int memory_dim);
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& memory);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  Attention self_attn{nullptr}, cross_attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(DecoderBlock);

// Non-autoregressive decoder: max_len learned queries cross-attend to the (normalised) encoder sequence;
// cross-attention keys/values are projected straight from the encoder width.
struct TextDecoderImpl : torch::nn::Module {
  TextDecoderImpl(const TextDecoderConfig& cfg, int encoder_dim);
  // (B, L, encoder_dim) -> (B, max_len, vocab) logits
  torch::Tensor forward(const torch::Tensor& enc_feats);

  TextDecoderConfig cfg;
  torch::nn::LayerNorm memory_norm{nullptr};
  torch::Tensor queries;
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(TextDecoder);

struct BranchOptions {
  bool with_pixel_decoder = true;
  bool use_regressor = true;
  bool use_projector = true;
};

// One Siamese branch: encoder F, prompt generator G, regressor R, projector H and (online only) pixel decoder D.
struct BranchImpl : torch::nn::Module {
  BranchImpl(const ModelConfig& cfg, BranchOptions opts);

  torch::Tensor encode(const torch::Tensor& images) { return encoder->forward(images); }
  // F_p and F_n for per-example direction indices; both prompts share one regressor.
  std::pair<torch::Tensor, torch::Tensor> decouple(const torch::Tensor& latent, const torch::Tensor& i_p,
                                                   const torch::Tensor& i_n);
  torch::Tensor reconstruct(const torch::Tensor& feats) { return pixel_decoder->forward(feats); }
  torch::Tensor windows(const torch::Tensor& feats) { return projector->forward(feats); }

  ModelConfig cfg;
  BranchOptions opts;
  VitEncoder encoder{nullptr};
  PromptGenerator prompt{nullptr};
  Regressor regressor{nullptr};
  WindowProjector projector{nullptr};
  PixelDecoder pixel_decoder{nullptr};
};
TORCH_MODULE(Branch);

// Encoder plus text decoder for the downstream recognizer.
struct TextRecognizerImpl : torch::nn::Module {
  explicit TextRecognizerImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images) { return decoder->forward(encoder->forward(images)); }

  ModelConfig cfg;
  VitEncoder encoder{nullptr};
  TextDecoder decoder{nullptr};
};
TORCH_MODULE(TextRecognizer);

// Parameters keyed by their dotted module path.
std::vector<std::pair<std::string, torch::Tensor>> named_parameters(const torch::nn::Module& m);

}  // namespace ssm::nn
