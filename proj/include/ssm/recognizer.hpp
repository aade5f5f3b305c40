#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ssm/checkpoint.hpp"
#include "ssm/datagen.hpp"
#include "ssm/model.hpp"

namespace ssm {

struct FinetuneConfig {
  nn::ModelConfig model = nn::ModelConfig::preset_config("nano");
  std::optional<std::filesystem::path> init_checkpoint;  // empty: scratch
  bool freeze_encoder = false;
  int epochs = 10;
  int batch_size = 64;
  double lr = 1e-4;
  int warmup_epochs = 1;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 1.0;
  double train_fraction = 1.0;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct SamplePrediction {
  std::string text;
  std::string truth;
  bool correct = false;
};

struct EvalReport {
  std::map<std::string, double> accuracy;  // per split
  std::vector<nlohmann::json> rows;        // per-config rows for sweeps
  std::vector<SamplePrediction> samples;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
  // One JSON object per line: a header with the config, then one row per split/config.
  void write(const std::filesystem::path& path) const;
  void write_predictions(const std::filesystem::path& path) const;
};

// Per-position argmax, truncated at the first EOS, PAD skipped. logits: (max_len, vocab).
std::string greedy_decode(const torch::Tensor& logits);

// Fraction of exact matches after case-folding and restricting both strings to the printable charset.
double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts);

// Encoder + text decoder with its configuration; the object persisted by fine-tuning.
struct Recognizer {
  FinetuneConfig config;
  nn::TextRecognizer model{nullptr};

  Checkpoint to_checkpoint() const;
  static Recognizer from_checkpoint(const Checkpoint& ckpt);
};

// Builds the recognizer for config: scratch init, or encoder weights from a pretraining checkpoint.
Recognizer make_recognizer(const FinetuneConfig& config);

// Decodes every item; labels are required. Pure in the model and inputs.
std::pair<double, std::vector<SamplePrediction>> evaluate(Recognizer& rec, const std::vector<DatasetItem>& items);

struct FinetuneResult {
  Recognizer best;
  EvalReport report;
  int best_epoch = 0;
};

// Trains the decoder (and the encoder unless frozen) with per-position cross-entropy, PAD masked;
// selects the checkpoint with the best validation word accuracy (earliest epoch on ties).
FinetuneResult finetune_run(const FinetuneConfig& config, const std::filesystem::path& manifest_path,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Fine-tunes on seeded subsamples of the train split, one row per fraction.
EvalReport data_ratio_run(const FinetuneConfig& config, const std::filesystem::path& manifest_path,
                          const std::vector<double>& fractions,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace ssm
