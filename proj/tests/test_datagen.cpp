#include <gtest/gtest.h>

#include <fstream>

#include "ssm/charset.hpp"
#include "ssm/datagen.hpp"
#include "test_util.hpp"

using namespace ssm;
using ssm::test::TempDir;

namespace {

constexpr double kMeasuredForeground = 0.1229;  // seed 2024, 100 renders

// Fraction of pixels closer to the foreground colour than to the background colour.
double foreground_fraction(const Image& img, const TextStyle& st) {
  int fg = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double dfg = 0.0, dbg = 0.0;
      for (int c = 0; c < 3; ++c) {
        dfg += std::abs(img.at(y, x, c) - st.fg[c]);
        dbg += std::abs(img.at(y, x, c) - st.bg[c]);
      }
      fg += dfg < dbg;
    }
  return static_cast<double>(fg) / (img.height() * img.width());
}

}  // namespace

TEST(Charset, EncodeDecode) {
  const auto enc = Charset::encode_label("Hi");
  ASSERT_EQ(enc.size(), static_cast<std::size_t>(Charset::kMaxLabelLength));
  EXPECT_EQ(enc[0], 2 + ('H' - '!'));
  EXPECT_EQ(enc[1], 2 + ('i' - '!'));
  EXPECT_EQ(enc[2], Charset::kEos);
  EXPECT_EQ(enc[3], Charset::kPad);
  EXPECT_EQ(Charset::decode_indices(enc), "Hi");
  EXPECT_EQ(Charset::kSize, 96);
  EXPECT_THROW(Charset::encode_label("a b"), std::invalid_argument);
  EXPECT_THROW(Charset::encode_label(std::string(26, 'a')), std::invalid_argument);
}

TEST(Render, DeterministicForSameSeed) {
  TextStyle st;
  Rng a(5), b(5);
  EXPECT_EQ(render_text_image("abc12", st, a), render_text_image("abc12", st, b));
}

TEST(Render, ShapeRangeAndQuantisation) {
  Rng rng(6);
  const Image img = render_text_image("Quiz", sample_style(StyleRanges{}, rng), rng);
  EXPECT_EQ(img.height(), kImageHeight);
  EXPECT_EQ(img.width(), kImageWidth);
  EXPECT_EQ(img.channels(), 3);
  for (float v : img.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
    ASSERT_FLOAT_EQ(std::round(v * 255.0f) / 255.0f, v);
  }
}

TEST(Render, SingleGlyphIsOneBlob) {
  TextStyle st;  // black on white, no noise, no rotation
  Rng rng(0);
  const Image img = render_text_image("A", st, rng);
  int min_x = img.width(), max_x = -1;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(y, x, 0) < 0.5f) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
      }
  ASSERT_GE(max_x, 0);
  EXPECT_LT(max_x - min_x, img.width() / 2);  // one glyph, not a word
}

TEST(Render, ForegroundFractionRegressionBound) {
  Rng rng(2024);
  const StyleRanges ranges;
  const std::string alphabet = CorpusConfig{}.alphabet;
  double sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::string text;
    const int len = 3 + static_cast<int>(rng() % 4);
    for (int j = 0; j < len; ++j) text += alphabet[rng() % alphabet.size()];
    TextStyle st = sample_style(ranges, rng);
    st.noise_sigma = 0.0;
    sum += foreground_fraction(render_text_image(text, st, rng), st);
  }
  const double mean = sum / 100.0;
  RecordProperty("mean_foreground_fraction", std::to_string(mean));
  EXPECT_GT(mean, 0.02);
  EXPECT_LT(mean, 0.6);
  // Regression bound around the measured mean.
  EXPECT_NEAR(mean, kMeasuredForeground, 0.02);
}

TEST(Corpus, PretrainOnly) {
  TempDir dir("corpus_pretrain");
  CorpusConfig cfg;
  cfg.n_pretrain = 10;
  cfg.n_labeled = 0;
  const auto m = gen_corpus(cfg, dir.path());
  ASSERT_EQ(m.records.size(), 10u);
  for (const auto& r : m.records) {
    EXPECT_EQ(r.split, Split::Pretrain);
    EXPECT_FALSE(r.label.has_value());
  }
}

TEST(Corpus, SplitArithmetic) {
  TempDir dir("corpus_split");
  CorpusConfig cfg;
  cfg.n_pretrain = 0;
  cfg.n_labeled = 100;
  const auto m = gen_corpus(cfg, dir.path());
  std::map<Split, int> counts;
  for (const auto& r : m.records) {
    ++counts[r.split];
    ASSERT_TRUE(r.label.has_value());
    Charset::validate(*r.label);
  }
  EXPECT_EQ(counts[Split::Train], 80);
  EXPECT_EQ(counts[Split::Val], 10);
  EXPECT_EQ(counts[Split::Test], 10);
}

TEST(Corpus, ByteIdenticalManifestsAndImages) {
  TempDir a("corpus_a"), b("corpus_b");
  CorpusConfig cfg;
  cfg.n_pretrain = 10;
  cfg.n_labeled = 20;
  cfg.seed = 7;
  gen_corpus(cfg, a.path());
  const auto m = gen_corpus(cfg, b.path());
  EXPECT_EQ(ssm::test::slurp(a.path() / "manifest.jsonl"), ssm::test::slurp(b.path() / "manifest.jsonl"));
  for (const auto& r : m.records) {
    ASSERT_EQ(ssm::test::slurp(a.path() / r.image_path), ssm::test::slurp(b.path() / r.image_path));
  }
  cfg.seed = 8;
  TempDir c("corpus_c");
  gen_corpus(cfg, c.path());
  EXPECT_NE(ssm::test::slurp(a.path() / "manifest.jsonl"), ssm::test::slurp(c.path() / "manifest.jsonl"));
}

TEST(Corpus, ManifestRoundTripAndLoad) {
  TempDir dir("corpus_rt");
  CorpusConfig cfg;
  cfg.n_pretrain = 4;
  cfg.n_labeled = 10;
  const auto m = gen_corpus(cfg, dir.path());
  const auto back = read_manifest(dir.path() / "manifest.jsonl");
  ASSERT_EQ(back.records.size(), m.records.size());
  EXPECT_EQ(back.charset_id, Charset::kId);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(back.records[i].image_path, m.records[i].image_path);
    EXPECT_EQ(back.records[i].label, m.records[i].label);
    EXPECT_EQ(back.records[i].split, m.records[i].split);
  }
  const auto train = load_dataset(dir.path() / "manifest.jsonl", Split::Train);
  ASSERT_EQ(train.size(), 8u);
  EXPECT_EQ(train[0].image.height(), kImageHeight);
}

TEST(Corpus, CorruptManifestNamesTheLine) {
  TempDir dir("corpus_bad");
  CorpusConfig cfg;
  cfg.n_pretrain = 3;
  cfg.n_labeled = 0;
  gen_corpus(cfg, dir.path());
  {
    std::ofstream out(dir.path() / "manifest.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    read_manifest(dir.path() / "manifest.jsonl");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
}

TEST(Corpus, InvalidConfigRejected) {
  CorpusConfig cfg;
  cfg.val_frac = 0.7;
  cfg.test_frac = 0.4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = CorpusConfig{};
  cfg.min_length = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Png, ExactRoundTrip) {
  TempDir dir("png");
  Rng rng(9);
  const Image img = render_text_image("png", sample_style(StyleRanges{}, rng), rng);
  write_png(img, dir.path() / "x.png");
  EXPECT_EQ(read_png(dir.path() / "x.png"), img);
}
