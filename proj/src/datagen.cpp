#include "ssm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ssm/charset.hpp"

namespace ssm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

float luminance(const std::array<float, 3>& rgb) {
  return 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2];
}

cv::Scalar to_bgr(const std::array<float, 3>& rgb) {
  return cv::Scalar(std::round(rgb[2] * 255.0f), std::round(rgb[1] * 255.0f), std::round(rgb[0] * 255.0f));
}

Image from_bgr8(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
  }
  return img;
}

}  // namespace

TextStyle sample_style(const StyleRanges& ranges, Rng& rng) {
  if (ranges.fonts.empty()) throw std::invalid_argument("style ranges need at least one font");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TextStyle s;
  s.font = ranges.fonts[std::uniform_int_distribution<std::size_t>(0, ranges.fonts.size() - 1)(rng)];
  s.italic = unit(rng) < ranges.italic_prob;
  s.thickness = std::uniform_int_distribution<int>(1, std::max(1, ranges.max_thickness))(rng);
  for (int attempt = 0;; ++attempt) {
    for (int c = 0; c < 3; ++c) {
      s.fg[c] = static_cast<float>(unit(rng));
      s.bg[c] = static_cast<float>(unit(rng));
    }
    if (std::abs(luminance(s.fg) - luminance(s.bg)) >= ranges.min_contrast) break;
    if (attempt > 64) {
      s.fg = {0, 0, 0};
      s.bg = {1, 1, 1};
      break;
    }
  }
  s.noise_sigma = unit(rng) * ranges.max_noise;
  s.rotation_deg = (2.0 * unit(rng) - 1.0) * ranges.max_rotation_deg;
  s.fill = ranges.fill_min + unit(rng) * (ranges.fill_max - ranges.fill_min);
  return s;
}

Image render_text_image(const std::string& text, const TextStyle& style, Rng& rng) {
  if (text.empty() || static_cast<int>(text.size()) > Charset::kMaxLabelLength) {
    throw std::invalid_argument("text length must be 1..25");
  }
  Charset::validate(text);

  const int face = style.font | (style.italic ? cv::FONT_ITALIC : 0);
  int baseline = 0;
  const cv::Size unit_size = cv::getTextSize(text, face, 1.0, style.thickness, &baseline);
  const double box_h = unit_size.height + baseline;
  const double scale = std::min(style.fill * kImageWidth / unit_size.width, style.fill * kImageHeight / box_h);

  cv::Mat canvas(kImageHeight, kImageWidth, CV_8UC3, to_bgr(style.bg));
  const int text_w = static_cast<int>(std::lround(unit_size.width * scale));
  const int text_h = static_cast<int>(std::lround(unit_size.height * scale));
  const int base = static_cast<int>(std::lround(baseline * scale));
  const cv::Point origin((kImageWidth - text_w) / 2, (kImageHeight + text_h - base) / 2);
  cv::putText(canvas, text, origin, face, scale, to_bgr(style.fg), style.thickness, cv::LINE_AA);

  if (style.rotation_deg != 0.0) {
    const cv::Point2f centre(0.5f * (kImageWidth - 1), 0.5f * (kImageHeight - 1));
    cv::Mat m = cv::getRotationMatrix2D(centre, style.rotation_deg, 1.0);
    cv::Mat rotated;
    cv::warpAffine(canvas, rotated, m, canvas.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    canvas = rotated;
  }

  if (style.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, style.noise_sigma * 255.0);
    for (int y = 0; y < canvas.rows; ++y) {
      auto* row = canvas.ptr<cv::Vec3b>(y);
      for (int x = 0; x < canvas.cols; ++x) {
        for (int c = 0; c < 3; ++c) row[x][c] = cv::saturate_cast<uchar>(row[x][c] + noise(rng));
      }
    }
  }
  return from_bgr8(canvas);
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Pretrain: return "pretrain";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "pretrain") return Split::Pretrain;
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

void CorpusConfig::validate() const {
  if (n_pretrain < 0 || n_labeled < 0) throw std::invalid_argument("corpus sizes must be non-negative");
  if (val_frac < 0 || test_frac < 0 || val_frac + test_frac > 1.0) {
    throw std::invalid_argument("val_frac + test_frac must lie in [0, 1]");
  }
  if (min_length < 1 || max_length > Charset::kMaxLabelLength || min_length > max_length) {
    throw std::invalid_argument("label lengths must satisfy 1 <= min <= max <= 25");
  }
  if (alphabet.empty()) throw std::invalid_argument("alphabet is empty");
  Charset::validate(alphabet);
  if (style.fonts.empty()) throw std::invalid_argument("no fonts configured");
}

json CorpusConfig::to_json() const {
  return json{{"n_pretrain", n_pretrain},
              {"n_labeled", n_labeled},
              {"val_frac", val_frac},
              {"test_frac", test_frac},
              {"min_length", min_length},
              {"max_length", max_length},
              {"alphabet", alphabet},
              {"seed", seed},
              {"style",
               {{"fonts", style.fonts},
                {"italic_prob", style.italic_prob},
                {"max_thickness", style.max_thickness},
                {"min_contrast", style.min_contrast},
                {"max_noise", style.max_noise},
                {"max_rotation_deg", style.max_rotation_deg},
                {"fill_min", style.fill_min},
                {"fill_max", style.fill_max}}}};
}

uint64_t record_seed(uint64_t seed, uint64_t index) {
  // splitmix64 over the combined key
  uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

DatasetManifest gen_corpus(const CorpusConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "images");

  const int n_val = static_cast<int>(std::lround(config.n_labeled * config.val_frac));
  const int n_test = static_cast<int>(std::lround(config.n_labeled * config.test_frac));
  const int n_train = config.n_labeled - n_val - n_test;

  DatasetManifest manifest;
  manifest.charset_id = std::string(Charset::kId);
  manifest.seed = config.seed;
  manifest.config = config.to_json();

  const int total = config.n_pretrain + config.n_labeled;
  for (int i = 0; i < total; ++i) {
    Rng rng(record_seed(config.seed, static_cast<uint64_t>(i)));
    std::uniform_int_distribution<int> len_dist(config.min_length, config.max_length);
    std::uniform_int_distribution<std::size_t> char_dist(0, config.alphabet.size() - 1);
    std::string text(static_cast<std::size_t>(len_dist(rng)), ' ');
    for (char& c : text) c = config.alphabet[char_dist(rng)];
    const TextStyle style = sample_style(config.style, rng);
    const Image img = render_text_image(text, style, rng);

    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i);
    write_png(img, out_dir / name);

    ManifestRecord rec;
    rec.image_path = name;
    if (i < config.n_pretrain) {
      rec.split = Split::Pretrain;
    } else {
      const int j = i - config.n_pretrain;
      rec.split = j < n_train ? Split::Train : (j < n_train + n_val ? Split::Val : Split::Test);
      rec.label = text;
    }
    manifest.records.push_back(std::move(rec));
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << json{{"kind", "header"},
              {"charset_id", manifest.charset_id},
              {"seed", manifest.seed},
              {"config", manifest.config}}
             .dump()
      << '\n';
  for (const auto& r : manifest.records) {
    json j{{"image_path", r.image_path}, {"split", to_string(r.split)}};
    j["label"] = r.label ? json(*r.label) : json(nullptr);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("corrupt manifest " + path.string() + " line " + std::to_string(line_no) + ": " +
                               e.what());
    }
    try {
      if (j.value("kind", "") == "header") {
        m.charset_id = j.at("charset_id").get<std::string>();
        m.seed = j.at("seed").get<uint64_t>();
        m.config = j.value("config", json::object());
        have_header = true;
        continue;
      }
      ManifestRecord r;
      r.image_path = j.at("image_path").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      if (!j.at("label").is_null()) {
        r.label = j.at("label").get<std::string>();
        Charset::validate(*r.label);
      }
      if ((r.split == Split::Pretrain) == r.label.has_value()) {
        throw std::invalid_argument("pretrain records must be unlabeled and other splits labeled");
      }
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument("corrupt manifest " + path.string() + " line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  if (!have_header) throw std::invalid_argument("corrupt manifest " + path.string() + ": missing header line");
  return m;
}

std::vector<DatasetItem> load_dataset(const fs::path& manifest_path, Split split,
                                      std::optional<uint64_t> shuffle_seed) {
  const DatasetManifest m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  std::vector<DatasetItem> items;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    items.push_back(DatasetItem{read_png(root / r.image_path), r.label, r.image_path});
  }
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    std::shuffle(items.begin(), items.end(), rng);
  }
  return items;
}

void write_png(const Image& img, const fs::path& path) {
  if (img.channels() != 3 && img.channels() != 1) throw std::invalid_argument("PNG export needs 1 or 3 channels");
  cv::Mat m(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<uchar>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        // OpenCV stores BGR
        const int dst_c = img.channels() == 3 ? 2 - c : 0;
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x * img.channels() + dst_c] = static_cast<uchar>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("failed to write " + path.string());
}

Image read_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw std::invalid_argument("missing or unreadable image " + path.string());
  return from_bgr8(m);
}

}  // namespace ssm
