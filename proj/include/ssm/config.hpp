#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssm/datagen.hpp"
#include "ssm/pretrainer.hpp"
#include "ssm/recognizer.hpp"

namespace ssm {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Flat "section.key" -> value configuration, merged as defaults < config file < overrides.
// Config files are sectioned key-value text:
//
//   # comment
//   [pretrain]
//   epochs = 3
//   input_mode = mixed
class RunConfig {
 public:
  static RunConfig defaults();

  void merge_file(const std::filesystem::path& path);
  // "section.key=value"; the key must already exist.
  void merge_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_string(const std::string& key) const { return get(key); }
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  nlohmann::json to_json() const;
  // Stable 8-hex-digit digest of the materialised configuration.
  std::string digest() const;

 private:
  std::map<std::string, std::string> values_;
};

CorpusConfig corpus_config_from(const RunConfig& rc);
nn::ModelConfig model_config_from(const RunConfig& rc);
PretrainConfig pretrain_config_from(const RunConfig& rc);
FinetuneConfig finetune_config_from(const RunConfig& rc);

}  // namespace ssm
