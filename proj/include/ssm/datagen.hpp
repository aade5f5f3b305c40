#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssm/imaging.hpp"

namespace ssm {

inline constexpr int kImageHeight = 32;
inline constexpr int kImageWidth = 128;
inline constexpr int kImageChannels = 3;

struct TextStyle {
  int font = 0;                     // OpenCV Hershey face id
  bool italic = false;
  int thickness = 1;
  std::array<float, 3> fg{0, 0, 0};
  std::array<float, 3> bg{1, 1, 1};
  double noise_sigma = 0.0;         // additive Gaussian noise, [0,1] units
  double rotation_deg = 0.0;
  double fill = 0.85;               // fraction of the canvas the text box may occupy
};

struct StyleRanges {
  std::vector<int> fonts{0, 2, 3, 4, 6, 7};
  double italic_prob = 0.2;
  int max_thickness = 2;
  double min_contrast = 0.4;
  double max_noise = 0.04;
  double max_rotation_deg = 3.0;
  double fill_min = 0.7;
  double fill_max = 0.95;
};

TextStyle sample_style(const StyleRanges& ranges, Rng& rng);

// Renders a 32x128x3 text image. Output values are multiples of 1/255 so the PNG round trip is exact.
Image render_text_image(const std::string& text, const TextStyle& style, Rng& rng);

enum class Split { Pretrain, Train, Val, Test };

std::string to_string(Split split);
Split parse_split(std::string_view name);

struct ManifestRecord {
  std::string image_path;  // relative to the manifest directory
  std::optional<std::string> label;
  Split split = Split::Pretrain;
};

struct DatasetManifest {
  std::string charset_id;
  uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<ManifestRecord> records;
};

struct CorpusConfig {
  int n_pretrain = 1000;
  int n_labeled = 500;
  double val_frac = 0.1;
  double test_frac = 0.1;
  int min_length = 3;
  int max_length = 6;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  StyleRanges style;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

// Per-record seed derived from (global seed, record index).
uint64_t record_seed(uint64_t seed, uint64_t index);

// Writes images/NNNNNN.png and manifest.jsonl under out_dir.
DatasetManifest gen_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct DatasetItem {
  Image image;
  std::optional<std::string> label;
  std::string image_path;
};

// Records of one split in manifest order, or shuffled when shuffle_seed is set.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path, Split split,
                                      std::optional<uint64_t> shuffle_seed = std::nullopt);

void write_png(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace ssm
