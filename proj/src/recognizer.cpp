#include "ssm/recognizer.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "ssm/charset.hpp"
#include "ssm/optim.hpp"

namespace ssm {

namespace fs = std::filesystem;
using nlohmann::json;

void FinetuneConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument("finetune config: " + msg); };
  if (epochs < 0 || warmup_epochs < 0) fail("epochs must be non-negative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (lr < 0) fail("lr must be non-negative");
  if (train_fraction <= 0 || train_fraction > 1) fail("train_fraction must lie in (0, 1]");
  if (model.decoder.vocab != Charset::kSize) fail("decoder vocabulary must match the 96-symbol charset");
  if (model.decoder.max_len != Charset::kMaxLabelLength) fail("decoder max_len must be 25");
}

json FinetuneConfig::to_json() const {
  return json{{"model", model.to_json()},
              {"init", init_checkpoint ? json(init_checkpoint->string()) : json("scratch")},
              {"freeze_encoder", freeze_encoder},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"lr", lr},
              {"schedule", "onecycle"},
              {"warmup_epochs", warmup_epochs},
              {"weight_decay", weight_decay},
              {"beta1", beta1},
              {"beta2", beta2},
              {"grad_clip", grad_clip},
              {"train_fraction", train_fraction},
              {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(const json& j) {
  FinetuneConfig c;
  c.model = nn::ModelConfig::from_json(j.at("model"));
  const std::string init = j.at("init");
  if (init != "scratch") c.init_checkpoint = fs::path(init);
  c.freeze_encoder = j.at("freeze_encoder");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.lr = j.at("lr");
  c.warmup_epochs = j.at("warmup_epochs");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.grad_clip = j.at("grad_clip");
  c.train_fraction = j.at("train_fraction");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

json EvalReport::to_json() const {
  json samples_json = json::array();
  for (const auto& s : samples) samples_json.push_back({{"text", s.text}, {"truth", s.truth}, {"correct", s.correct}});
  return json{{"config", config}, {"accuracy", accuracy}, {"rows", rows}, {"samples", samples_json}};
}

void EvalReport::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << json{{"kind", "config"}, {"config", config}}.dump() << '\n';
  for (const auto& [split, acc] : accuracy) {
    out << json{{"kind", "split"}, {"split", split}, {"word_accuracy", acc}}.dump() << '\n';
  }
  for (const auto& row : rows) out << json{{"kind", "row"}, {"row", row}}.dump() << '\n';
}

void EvalReport::write_predictions(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write predictions " + path.string());
  for (const auto& s : samples) {
    out << json{{"text", s.text}, {"truth", s.truth}, {"correct", s.correct}}.dump() << '\n';
  }
}

std::string greedy_decode(const torch::Tensor& logits) {
  TORCH_CHECK(logits.dim() == 2 && logits.size(1) == Charset::kSize, "greedy_decode expects (max_len, 96) logits");
  auto idx = logits.argmax(-1).to(torch::kInt64).contiguous();
  const int64_t* p = idx.data_ptr<int64_t>();
  return Charset::decode_indices(std::vector<int64_t>(p, p + idx.numel()));
}

double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("word_accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += Charset::normalize(preds[i]) == Charset::normalize(gts[i]);
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

Checkpoint Recognizer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = json{{"kind", "recognizer"}, {"config", config.to_json()}, {"charset_id", std::string(Charset::kId)}};
  ckpt.put_module("recognizer", *model);
  return ckpt;
}

Recognizer Recognizer::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "recognizer") throw std::invalid_argument("not a recognizer checkpoint");
  if (ckpt.meta.value("charset_id", "") != Charset::kId) throw std::invalid_argument("checkpoint charset mismatch");
  Recognizer rec;
  rec.config = FinetuneConfig::from_json(ckpt.meta.at("config"));
  rec.model = nn::TextRecognizer(rec.config.model);
  ckpt.load_module("recognizer", *rec.model);
  return rec;
}

namespace {

bool same_encoder(const nn::ModelConfig& a, const nn::ModelConfig& b) {
  return a.image_height == b.image_height && a.image_width == b.image_width && a.channels == b.channels &&
         a.patch == b.patch && a.dim == b.dim && a.depth == b.depth && a.heads == b.heads &&
         a.mlp_ratio == b.mlp_ratio;
}

void set_encoder_frozen(Recognizer& rec, bool frozen) {
  for (auto& p : rec.model->encoder->parameters()) p.set_requires_grad(!frozen);
}

}  // namespace

Recognizer make_recognizer(const FinetuneConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);
  Recognizer rec;
  rec.config = config;
  rec.model = nn::TextRecognizer(config.model);
  if (config.init_checkpoint) {
    const Checkpoint ckpt = Checkpoint::load(*config.init_checkpoint);
    if (ckpt.meta.value("charset_id", "") != Charset::kId) {
      throw std::invalid_argument("checkpoint charset '" + ckpt.meta.value("charset_id", std::string("?")) +
                                  "' does not match " + std::string(Charset::kId));
    }
    const std::string kind = ckpt.meta.value("kind", "");
    if (kind == "pretrain") {
      const auto ckpt_model = nn::ModelConfig::from_json(ckpt.meta.at("config").at("model"));
      if (!same_encoder(ckpt_model, config.model)) {
        throw std::invalid_argument("pretraining checkpoint encoder config does not match the fine-tune model");
      }
      ckpt.load_module("online.encoder", *rec.model->encoder);
    } else if (kind == "recognizer") {
      ckpt.load_module("recognizer", *rec.model);
    } else {
      throw std::invalid_argument("unrecognised checkpoint kind '" + kind + "'");
    }
  }
  set_encoder_frozen(rec, config.freeze_encoder);
  return rec;
}

std::pair<double, std::vector<SamplePrediction>> evaluate(Recognizer& rec, const std::vector<DatasetItem>& items) {
  torch::NoGradGuard no_grad;
  std::vector<SamplePrediction> preds;
  std::vector<std::string> texts, truths;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < std::min(items.size(), start + kChunk); ++i) imgs.push_back(&items[i].image);
    auto logits = rec.model->forward(nn::images_to_tensor(imgs));
    for (int64_t b = 0; b < logits.size(0); ++b) {
      const DatasetItem& item = items[start + static_cast<std::size_t>(b)];
      if (!item.label) throw std::invalid_argument("evaluation item " + item.image_path + " has no label");
      SamplePrediction p{greedy_decode(logits[b]), *item.label, false};
      p.correct = Charset::normalize(p.text) == Charset::normalize(p.truth);
      texts.push_back(p.text);
      truths.push_back(p.truth);
      preds.push_back(std::move(p));
    }
  }
  return {word_accuracy(texts, truths), std::move(preds)};
}

namespace {

std::vector<DatasetItem> subsample(std::vector<DatasetItem> items, double fraction, uint64_t seed) {
  if (fraction >= 1.0) return items;
  Rng rng(record_seed(seed, 0xDA7A));
  std::shuffle(items.begin(), items.end(), rng);
  const auto keep = static_cast<std::size_t>(std::max<long>(1, std::lround(fraction * static_cast<double>(items.size()))));
  items.resize(std::min(keep, items.size()));
  return items;
}

torch::Tensor encode_labels(const std::vector<DatasetItem>& items) {
  std::vector<int64_t> flat;
  for (const auto& item : items) {
    if (!item.label) throw std::invalid_argument("training item " + item.image_path + " has no label");
    const auto enc = Charset::encode_label(*item.label);
    flat.insert(flat.end(), enc.begin(), enc.end());
  }
  return torch::tensor(flat, torch::kInt64).reshape({static_cast<int64_t>(items.size()), Charset::kMaxLabelLength});
}

}  // namespace

FinetuneResult finetune_run(const FinetuneConfig& config, const fs::path& manifest_path,
                            const std::optional<fs::path>& out_dir) {
  config.validate();
  const DatasetManifest manifest = read_manifest(manifest_path);
  if (manifest.charset_id != Charset::kId) {
    throw std::invalid_argument("manifest charset '" + manifest.charset_id + "' does not match the model charset");
  }
  std::vector<DatasetItem> train = subsample(load_dataset(manifest_path, Split::Train), config.train_fraction,
                                             config.seed);
  const std::vector<DatasetItem> val = load_dataset(manifest_path, Split::Val);
  const std::vector<DatasetItem> test = load_dataset(manifest_path, Split::Test);
  if (train.empty()) throw std::invalid_argument("manifest has no labeled train split");

  Recognizer rec = make_recognizer(config);
  std::vector<std::pair<std::string, torch::Tensor>> trainable;
  for (auto& [name, p] : nn::named_parameters(*rec.model)) {
    if (p.requires_grad()) trainable.emplace_back(name, p);
  }
  if (trainable.empty()) throw std::invalid_argument("all parameters are frozen; nothing to train");
  AdamW optimizer(trainable, AdamWOptions{config.beta1, config.beta2, 1e-8, config.weight_decay});
  std::vector<torch::Tensor> trainable_tensors;
  for (auto& [_, p] : trainable) trainable_tensors.push_back(p);

  const torch::Tensor labels = encode_labels(train);
  torch::Tensor inputs;
  {
    std::vector<const Image*> imgs;
    for (const auto& item : train) imgs.push_back(&item.image);
    inputs = nn::images_to_tensor(imgs);
  }
  // A frozen encoder is a fixed feature extractor: encode the train split once.
  if (config.freeze_encoder) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> chunks;
    for (int64_t s = 0; s < inputs.size(0); s += 64) {
      chunks.push_back(rec.model->encoder->forward(inputs.slice(0, s, std::min(inputs.size(0), s + 64))));
    }
    inputs = torch::cat(chunks, 0);
  }

  const int64_t n = inputs.size(0);
  const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = steps_per_epoch * config.epochs;
  const int64_t warmup_steps = std::min(total_steps, steps_per_epoch * config.warmup_epochs);

  FinetuneResult result;
  Checkpoint best = rec.to_checkpoint();
  double best_val = -1.0;
  int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(record_seed(config.seed, static_cast<uint64_t>(epoch) + 1));
    std::vector<int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto perm = torch::tensor(order, torch::kInt64);
    double loss_sum = 0.0;
    for (int64_t s = 0; s < n; s += config.batch_size) {
      auto idx = perm.slice(0, s, std::min(n, s + config.batch_size));
      auto x = inputs.index_select(0, idx);
      auto y = labels.index_select(0, idx);
      auto logits = config.freeze_encoder ? rec.model->decoder->forward(x) : rec.model->forward(x);
      auto loss = torch::nn::functional::cross_entropy(
          logits.reshape({-1, Charset::kSize}), y.reshape({-1}),
          torch::nn::functional::CrossEntropyFuncOptions().ignore_index(Charset::kPad));
      optimizer.zero_grad();
      loss.backward();
      clip_grad_norm(trainable_tensors, config.grad_clip);
      optimizer.step(one_cycle_lr(step, warmup_steps, total_steps, config.lr));
      loss_sum += loss.item<double>();
      ++step;
    }
    const double val_acc = val.empty() ? 0.0 : evaluate(rec, val).first;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "finetune epoch " << epoch + 1 << "/" << config.epochs << " loss "
              << loss_sum / static_cast<double>(steps_per_epoch) << " val acc " << val_acc << " (" << secs << " s)\n";
    if (val_acc > best_val) {
      best_val = val_acc;
      best = rec.to_checkpoint();
      result.best_epoch = epoch + 1;
    }
  }

  result.best = Recognizer::from_checkpoint(best);
  set_encoder_frozen(result.best, config.freeze_encoder);
  result.report.config = config.to_json();
  if (!val.empty()) result.report.accuracy["val"] = evaluate(result.best, val).first;
  if (!test.empty()) {
    auto [acc, samples] = evaluate(result.best, test);
    result.report.accuracy["test"] = acc;
    result.report.samples = std::move(samples);
  }
  std::cerr << "finetune: best epoch " << result.best_epoch << " of " << config.epochs << ", " << n
            << " training images\n";
  if (out_dir) {
    fs::create_directories(*out_dir);
    result.best.to_checkpoint().save(*out_dir / "best.ckpt");
    result.report.write(*out_dir / "report.jsonl");
    result.report.write_predictions(*out_dir / "predictions.jsonl");
  }
  return result;
}

EvalReport data_ratio_run(const FinetuneConfig& config, const fs::path& manifest_path,
                          const std::vector<double>& fractions, const std::optional<fs::path>& out_dir) {
  const std::size_t n_train = load_dataset(manifest_path, Split::Train).size();
  EvalReport report;
  report.config = config.to_json();
  for (double f : fractions) {
    if (std::lround(f * static_cast<double>(n_train)) < 10) {
      throw std::invalid_argument("train split too small: fraction " + std::to_string(f) + " leaves fewer than 10 samples");
    }
  }
  for (double f : fractions) {
    FinetuneConfig c = config;
    c.train_fraction = f;
    std::optional<fs::path> sub;
    if (out_dir) sub = *out_dir / ("fraction_" + std::to_string(f));
    FinetuneResult r = finetune_run(c, manifest_path, sub);
    json row{{"fraction", f}, {"n_train", std::lround(f * static_cast<double>(n_train))}};
    for (const auto& [split, acc] : r.report.accuracy) row[split] = acc;
    report.rows.push_back(row);
  }
  if (out_dir) report.write(*out_dir / "data_ratio.jsonl");
  return report;
}

}  // namespace ssm
