#include "ssm/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ssm::nn {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (patch <= 0 || image_height % patch != 0 || image_width % patch != 0) {
    fail("image height and width must be divisible by the patch size");
  }
  if (channels <= 0 || dim <= 0 || depth < 0 || regressor_depth < 0) fail("dimensions must be positive");
  if (heads <= 0 || dim % heads != 0) fail("dim must be divisible by heads");
  if (projector.n_windows <= 0 || grid_width() % projector.n_windows != 0) {
    fail("n_windows must divide the token grid width " + std::to_string(grid_width()));
  }
  if (projector.out_dim <= 0) fail("projector out_dim must be positive");
  if (decoder.heads <= 0 || decoder.dim % decoder.heads != 0) fail("decoder dim must be divisible by decoder heads");
  if (decoder.max_len <= 0 || decoder.vocab <= 2) fail("decoder max_len/vocab invalid");
}

ModelConfig ModelConfig::preset_config(std::string_view name) {
  ModelConfig c;
  c.preset = std::string(name);
  if (name == "nano") {
    // Desk-scale preset: a 2-block regressor keeps a 2k-image, 3-epoch run within a single-core budget.
    c.regressor_depth = 2;
    // Text decoder at encoder width; the 6x384 decoder dominated fine-tuning time on one core.
    c.decoder = {3, 192, 3, 25, 96};
  } else if (name == "tiny") {
    c.depth = 12;
    c.regressor_depth = 4;
  } else if (name == "small") {
    c.regressor_depth = 4;
    c.dim = 384;
    c.depth = 12;
    c.heads = 6;
  } else if (name == "micro") {
    c.dim = 64;
    c.depth = 2;
    c.heads = 2;
    c.regressor_depth = 2;
    c.projector.out_dim = 64;
    c.decoder = {2, 128, 4, 25, 96};
  } else if (name == "gradcheck") {
    c.image_height = 8;
    c.image_width = 16;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.regressor_depth = 2;
    c.projector = {2, 32, 8};
    c.decoder = {1, 16, 2, 25, 96};
  } else {
    throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
  }
  return c;
}

json ModelConfig::to_json() const {
  return json{{"preset", preset},
              {"image_height", image_height},
              {"image_width", image_width},
              {"channels", channels},
              {"patch", patch},
              {"dim", dim},
              {"depth", depth},
              {"heads", heads},
              {"mlp_ratio", mlp_ratio},
              {"regressor_depth", regressor_depth},
              {"pixel_hidden", pixel_hidden},
              {"projector", {{"n_windows", projector.n_windows},
                             {"hidden_dim", projector.hidden_dim},
                             {"out_dim", projector.out_dim}}},
              {"decoder", {{"depth", decoder.depth},
                           {"dim", decoder.dim},
                           {"heads", decoder.heads},
                           {"max_len", decoder.max_len},
                           {"vocab", decoder.vocab}}}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.image_height = j.at("image_height");
  c.image_width = j.at("image_width");
  c.channels = j.at("channels");
  c.patch = j.at("patch");
  c.dim = j.at("dim");
  c.depth = j.at("depth");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.regressor_depth = j.at("regressor_depth");
  c.pixel_hidden = j.at("pixel_hidden");
  const auto& p = j.at("projector");
  c.projector = {p.at("n_windows"), p.at("hidden_dim"), p.at("out_dim")};
  const auto& d = j.at("decoder");
  c.decoder = {d.at("depth"), d.at("dim"), d.at("heads"), d.at("max_len"), d.at("vocab")};
  c.validate();
  return c;
}

void trunc_normal_(torch::Tensor t, double std) {
  torch::NoGradGuard no_grad;
  // Inverse-CDF sampling restricted to [-2, 2] standard deviations.
  const double lo = 0.5 * (1.0 + std::erf(-2.0 / std::sqrt(2.0)));
  const double hi = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
  t.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0);
  t.erfinv_().mul_(std * std::sqrt(2.0)).clamp_(-2.0 * std, 2.0 * std);
}

namespace {

torch::nn::Linear make_linear(int in, int out) {
  torch::nn::Linear l(in, out);
  trunc_normal_(l->weight);
  torch::nn::init::zeros_(l->bias);
  return l;
}

torch::nn::LayerNorm make_norm(int dim) {
  return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6));
}

}  // namespace

torch::Tensor patchify(const torch::Tensor& images, int patch) {
  TORCH_CHECK(images.dim() == 4, "patchify expects (B, C, H, W)");
  const int64_t b = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  TORCH_CHECK(h % patch == 0 && w % patch == 0, "image size not divisible by patch");
  return images.reshape({b, c, h / patch, patch, w / patch, patch})
      .permute({0, 2, 4, 3, 5, 1})
      .reshape({b, (h / patch) * (w / patch), patch * patch * c});
}

torch::Tensor unpatchify(const torch::Tensor& tokens, int patch, int height, int width, int channels) {
  TORCH_CHECK(tokens.dim() == 3, "unpatchify expects (B, L, p*p*C)");
  const int64_t b = tokens.size(0);
  const int64_t gh = height / patch, gw = width / patch;
  TORCH_CHECK(tokens.size(1) == gh * gw && tokens.size(2) == patch * patch * channels,
              "token layout does not match image geometry");
  return tokens.reshape({b, gh, gw, patch, patch, channels})
      .permute({0, 5, 1, 3, 2, 4})
      .reshape({b, channels, height, width});
}

torch::Tensor images_to_tensor(const std::vector<const Image*>& images) {
  TORCH_CHECK(!images.empty(), "empty image batch");
  const Image& first = *images.front();
  auto out = torch::empty({static_cast<int64_t>(images.size()), first.height(), first.width(), first.channels()},
                          torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const Image* img : images) {
    TORCH_CHECK(img->same_shape(first), "image batch has mixed shapes");
    dst = std::copy(img->data().begin(), img->data().end(), dst);
  }
  return out.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor images_to_tensor(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return images_to_tensor(ptrs);
}

Image tensor_to_image(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3, "expected (C, H, W)");
  auto hwc = chw.detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
  const float* p = hwc.data_ptr<float>();
  return Image(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)),
               std::vector<float>(p, p + hwc.numel()));
}

MlpImpl::MlpImpl(int in_dim, int hidden_dim, int out_dim) {
  fc1 = register_module("fc1", make_linear(in_dim, hidden_dim));
  fc2 = register_module("fc2", make_linear(hidden_dim, out_dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

AttentionImpl::AttentionImpl(int dim, int heads_, int kv_dim) : heads(heads_) {
  q = register_module("q", make_linear(dim, dim));
  kv = register_module("kv", make_linear(kv_dim > 0 ? kv_dim : dim, 2 * dim));
  proj = register_module("proj", make_linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x) { return forward(x, x); }

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& memory) {
  const int64_t b = x.size(0), n = x.size(1), c = q->options.out_features();
  const int64_t m = memory.size(1);
  const int64_t hd = c / heads;  // softmax(q k^T / sqrt(hd)) v
  auto qh = q(x).reshape({b, n, heads, hd}).transpose(1, 2);
  auto kvh = kv(memory).reshape({b, m, 2, heads, hd}).permute({2, 0, 3, 1, 4});
  auto out = at::scaled_dot_product_attention(qh, kvh[0], kvh[1]).transpose(1, 2).reshape({b, n, c});
  return proj(out);
}

BlockImpl::BlockImpl(int dim, int heads, double mlp_ratio) {
  norm1 = register_module("norm1", make_norm(dim));
  attn = register_module("attn", Attention(dim, heads));
  norm2 = register_module("norm2", make_norm(dim));
  mlp = register_module("mlp", Mlp(dim, static_cast<int>(dim * mlp_ratio), dim));
}

torch::Tensor BlockImpl::forward(torch::Tensor x) {
  x = x + attn->forward(norm1(x));
  return x + mlp(norm2(x));
}

VitEncoderImpl::VitEncoderImpl(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  patch_embed = register_module("patch_embed", make_linear(cfg.patch_values(), cfg.dim));
  pos_embed = register_parameter("pos_embed", torch::empty({1, cfg.tokens(), cfg.dim}));
  trunc_normal_(pos_embed);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.depth; ++i) blocks->push_back(Block(cfg.dim, cfg.heads, cfg.mlp_ratio));
  norm = register_module("norm", make_norm(cfg.dim));
}

torch::Tensor VitEncoderImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == cfg.channels && images.size(2) == cfg.image_height &&
                  images.size(3) == cfg.image_width,
              "encoder input shape mismatch: expected (B, ", cfg.channels, ", ", cfg.image_height, ", ",
              cfg.image_width, ")");
  auto x = patch_embed(patchify(images, cfg.patch)) + pos_embed;
  for (const auto& blk : *blocks) x = blk->as<Block>()->forward(x);
  return norm(x);
}

PromptGeneratorImpl::PromptGeneratorImpl(int dim) {
  embed = register_module("embed", torch::nn::Embedding(DirectionIndex::kCount, dim));
  trunc_normal_(embed->weight);
  fc1 = register_module("fc1", make_linear(dim, dim));
  norm = register_module("norm", make_norm(dim));
  fc2 = register_module("fc2", make_linear(dim, dim));
}

torch::Tensor PromptGeneratorImpl::forward(const torch::Tensor& index) {
  TORCH_CHECK(index.scalar_type() == torch::kInt64, "direction indices must be int64");
  TORCH_CHECK(index.numel() == 0 || (index.min().item<int64_t>() >= 0 &&
                                     index.max().item<int64_t>() < DirectionIndex::kCount),
              "direction index out of range");
  return fc2(torch::gelu(norm(fc1(embed(index)))));
}

torch::Tensor PromptGeneratorImpl::forward(DirectionIndex index) {
  auto idx = torch::full({1}, index.value(), torch::kInt64);
  return forward(idx).squeeze(0);
}

RegressorImpl::RegressorImpl(int dim, int depth_, int heads, double mlp_ratio) : depth(depth_) {
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < depth; ++i) blocks->push_back(Block(dim, heads, mlp_ratio));
  if (depth > 0) norm = register_module("norm", make_norm(dim));
}

torch::Tensor RegressorImpl::forward(const torch::Tensor& prompt, const torch::Tensor& feats) {
  TORCH_CHECK(prompt.dim() == 2 && feats.dim() == 3 && prompt.size(0) == feats.size(0) &&
                  prompt.size(1) == feats.size(2),
              "regressor: prompt (B, d) and feats (B, L, d) dimensions disagree");
  if (depth == 0) return feats;
  auto x = torch::cat({prompt.unsqueeze(1), feats}, 1);
  for (const auto& blk : *blocks) x = blk->as<Block>()->forward(x);
  return norm(x).slice(1, 1);
}

PixelDecoderImpl::PixelDecoderImpl(const ModelConfig& c) : cfg(c) {
  const int hidden = cfg.pixel_hidden > 0 ? cfg.pixel_hidden : cfg.dim;
  fc1 = register_module("fc1", make_linear(cfg.dim, hidden));
  fc2 = register_module("fc2", make_linear(hidden, cfg.patch_values()));
}

torch::Tensor PixelDecoderImpl::forward(const torch::Tensor& feats) {
  auto tokens = fc2(torch::gelu(fc1(feats)));
  return unpatchify(tokens, cfg.patch, cfg.image_height, cfg.image_width, cfg.channels);
}

WindowProjectorImpl::WindowProjectorImpl(const ModelConfig& c, bool use_mlp_) : cfg(c), use_mlp(use_mlp_) {
  if (cfg.grid_width() % cfg.projector.n_windows != 0) {
    throw std::invalid_argument("n_windows must divide the token grid width");
  }
  if (use_mlp) mlp = register_module("mlp", Mlp(cfg.dim, cfg.projector_hidden(), cfg.projector.out_dim));
}

torch::Tensor WindowProjectorImpl::pool(const torch::Tensor& feats) const {
  const int64_t b = feats.size(0);
  const int gh = cfg.grid_height(), gw = cfg.grid_width(), nw = cfg.projector.n_windows;
  TORCH_CHECK(feats.size(1) == gh * gw, "projector: token count does not match the grid");
  return feats.reshape({b, gh, nw, gw / nw, feats.size(2)}).mean({1, 3});
}

torch::Tensor WindowProjectorImpl::forward(const torch::Tensor& feats) {
  auto w = pool(feats);
  if (use_mlp) w = mlp(w);
  return torch::nn::functional::normalize(w, torch::nn::functional::NormalizeFuncOptions().dim(-1).eps(1e-12));
}

DecoderBlockImpl::DecoderBlockImpl(int dim, int heads, double mlp_ratio, int memory_dim) {
  norm1 = register_module("norm1", make_norm(dim));
  self_attn = register_module("self_attn", Attention(dim, heads));
  norm2 = register_module("norm2", make_norm(dim));
  cross_attn = register_module("cross_attn", Attention(dim, heads, memory_dim));
  norm3 = register_module("norm3", make_norm(dim));
  mlp = register_module("mlp", Mlp(dim, static_cast<int>(dim * mlp_ratio), dim));
}

torch::Tensor DecoderBlockImpl::forward(torch::Tensor x, const torch::Tensor& memory) {
  x = x + self_attn->forward(norm1(x));
  x = x + cross_attn->forward(norm2(x), memory);
  return x + mlp(norm3(x));
}

TextDecoderImpl::TextDecoderImpl(const TextDecoderConfig& c, int encoder_dim) : cfg(c) {
  memory_norm = register_module("memory_norm", make_norm(encoder_dim));
  queries = register_parameter("queries", torch::empty({1, cfg.max_len, cfg.dim}));
  trunc_normal_(queries);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.depth; ++i) blocks->push_back(DecoderBlock(cfg.dim, cfg.heads, 4.0, encoder_dim));
  norm = register_module("norm", make_norm(cfg.dim));
  head = register_module("head", make_linear(cfg.dim, cfg.vocab));
}

torch::Tensor TextDecoderImpl::forward(const torch::Tensor& enc_feats) {
  auto memory = memory_norm(enc_feats);
  auto x = queries.expand({enc_feats.size(0), cfg.max_len, cfg.dim});
  for (const auto& blk : *blocks) x = blk->as<DecoderBlock>()->forward(x, memory);
  return head(norm(x));
}

BranchImpl::BranchImpl(const ModelConfig& c, BranchOptions o) : cfg(c), opts(o) {
  cfg.validate();
  encoder = register_module("encoder", VitEncoder(cfg));
  prompt = register_module("prompt", PromptGenerator(cfg.dim));
  regressor = register_module("regressor", Regressor(cfg.dim, opts.use_regressor ? cfg.regressor_depth : 0,
                                                     cfg.heads, cfg.mlp_ratio));
  projector = register_module("projector", WindowProjector(cfg, opts.use_projector));
  if (opts.with_pixel_decoder) pixel_decoder = register_module("pixel_decoder", PixelDecoder(cfg));
}

std::pair<torch::Tensor, torch::Tensor> BranchImpl::decouple(const torch::Tensor& latent, const torch::Tensor& i_p,
                                                             const torch::Tensor& i_n) {
  if (regressor->depth == 0) return {latent, latent};
  const int64_t b = latent.size(0);
  auto prompts = prompt->forward(torch::cat({i_p, i_n}, 0));
  auto out = regressor(prompts, torch::cat({latent, latent}, 0));
  return {out.slice(0, 0, b), out.slice(0, b)};
}

TextRecognizerImpl::TextRecognizerImpl(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  encoder = register_module("encoder", VitEncoder(cfg));
  decoder = register_module("decoder", TextDecoder(cfg.decoder, cfg.dim));
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(true)) out.emplace_back(item.key(), item.value());
  return out;
}

}  // namespace ssm::nn
