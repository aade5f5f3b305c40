#include <gtest/gtest.h>

#include <cmath>

#include "ssm/datagen.hpp"
#include "ssm/imaging.hpp"
#include "test_util.hpp"

using namespace ssm;
using ssm::test::random_image;

namespace {

Image from_rows(std::vector<std::vector<float>> rows) {
  Image img(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) img.at(y, x, 0) = rows[y][x];
  return img;
}

// Direct 2D convolution with a normalised Gaussian of radius ceil(3 sigma), replicated borders.
Image blur_oracle(const Image& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k1(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k1[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k1) v /= s;
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = std::clamp(y + dy, 0, img.height() - 1);
            const int xx = std::clamp(x + dx, 0, img.width() - 1);
            acc += k1[dy + r] * k1[dx + r] * img.at(yy, xx, c);
          }
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

double mae(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

SuperimposeOptions clean_options() {
  SuperimposeOptions o;
  o.weak = WeakAugmentConfig::identity();
  return o;
}

}  // namespace

TEST(Flips, TwoByTwoExamples) {
  const Image x = from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(hflip(x), from_rows({{2, 1}, {4, 3}}));
  EXPECT_EQ(vflip(x), from_rows({{3, 4}, {1, 2}}));
  EXPECT_EQ(rot180(x), from_rows({{4, 3}, {2, 1}}));
}

TEST(Flips, InvolutionsAndComposition) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Image x = random_image(5 + i % 4, 7 + i % 3, 3, rng);
    EXPECT_EQ(hflip(hflip(x)), x);
    EXPECT_EQ(vflip(vflip(x)), x);
    EXPECT_EQ(rot180(rot180(x)), x);
    EXPECT_EQ(rot180(x), hflip(vflip(x)));
    EXPECT_EQ(invert(x, InversionKind::VFlip), vflip(x));
  }
}

TEST(Flips, FixedPoints) {
  const Image c(4, 6, 3, 0.37f);
  EXPECT_EQ(hflip(c), c);
  EXPECT_EQ(vflip(c), c);
  Rng rng(2);
  const Image row = random_image(1, 9, 1, rng);
  EXPECT_EQ(vflip(row), row);
  const Image two = random_image(2, 9, 1, rng);
  EXPECT_NE(vflip(two), two);
}

TEST(Direction, IndexValidation) {
  EXPECT_EQ(DirectionIndex::original().value(), 0);
  EXPECT_EQ(DirectionIndex::of(InversionKind::HFlip).value(), 1);
  EXPECT_EQ(DirectionIndex::of(InversionKind::VFlip).value(), 2);
  EXPECT_EQ(DirectionIndex::of(InversionKind::Rotate180).value(), 3);
  EXPECT_THROW(DirectionIndex(4), std::out_of_range);
  EXPECT_THROW(DirectionIndex(-1), std::out_of_range);
  EXPECT_THROW(parse_inversion_kind("Rotate90"), std::invalid_argument);
}

TEST(Superimpose, HandExample) {
  Rng rng(0);
  const Image x = from_rows({{0, 1}});
  const auto s = make_superimposed(x, InversionKind::HFlip, clean_options(), rng);
  EXPECT_EQ(s.x_s_reg, from_rows({{0.5f, 0.5f}}));
  EXPECT_EQ(s.i_n.value(), 1);
  EXPECT_EQ(s.i_p.value(), 0);
  EXPECT_EQ(s.x_reg, x);
  EXPECT_EQ(s.x_r_reg, hflip(x));
}

TEST(Superimpose, ConstantImageIsFixed) {
  Rng rng(0);
  const Image c(8, 16, 3, 0.25f);
  for (auto k : {InversionKind::HFlip, InversionKind::VFlip, InversionKind::Rotate180}) {
    EXPECT_EQ(make_superimposed(c, k, clean_options(), rng).x_s_reg, c);
  }
}

TEST(Superimpose, SymmetricUnderItsOwnInversion) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Image x = random_image(32, 128, 3, rng);
    for (auto k : {InversionKind::HFlip, InversionKind::VFlip, InversionKind::Rotate180}) {
      const auto s = make_superimposed(x, k, clean_options(), rng);
      ASSERT_EQ(invert(s.x_s_reg, k), s.x_s_reg);
    }
  }
}

TEST(Superimpose, RandomKindCoversAllThree) {
  Rng rng(4);
  const Image x = random_image(4, 4, 3, rng);
  std::set<int> seen;
  for (int i = 0; i < 60; ++i) {
    const auto s = make_superimposed(x, std::nullopt, clean_options(), rng);
    seen.insert(s.i_n.value());
    ASSERT_EQ(s.x_r_reg, invert(x, *s.inversion_kind));
  }
  EXPECT_EQ(seen, (std::set<int>{1, 2, 3}));
}

TEST(Superimpose, WeakAugmentSharedAcrossViews) {
  // The superimposed view stays symmetric because one set of weak parameters hits every view.
  Rng rng(5);
  SuperimposeOptions o;
  o.weak.blur_prob = 1.0;
  o.weak.grayscale_prob = 1.0;
  o.weak.brightness_prob = 1.0;
  const Image x = random_image(16, 32, 3, rng);
  const auto s = make_superimposed(x, InversionKind::HFlip, o, rng);
  EXPECT_LT(mae(hflip(s.x_s_reg), s.x_s_reg), 1e-6);
  EXPECT_LT(mae(hflip(s.x_reg), s.x_r_reg), 1e-6);
}

TEST(Superimpose, IrregularViewToggle) {
  Rng rng(6);
  SuperimposeOptions o = clean_options();
  o.irregular_view = false;
  const Image x = random_image(32, 128, 3, rng);
  const auto s = make_superimposed(x, InversionKind::VFlip, o, rng);
  EXPECT_EQ(s.x_s_irr, s.x_s_reg);
  o.irregular_view = true;
  const auto t = make_superimposed(x, InversionKind::VFlip, o, rng);
  EXPECT_NE(t.x_s_irr, t.x_s_reg);
  EXPECT_TRUE(t.x_s_irr.in_range());
}

TEST(WeakAugment, AllProbabilitiesZeroIsIdentity) {
  Rng rng(7);
  const Image x = random_image(10, 20, 3, rng);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment_weak(x, WeakAugmentConfig::identity(), rng), x);
}

TEST(WeakAugment, GrayscaleEqualChannels) {
  Rng rng(8);
  const Image g = to_grayscale(random_image(10, 20, 3, rng));
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      ASSERT_EQ(g.at(y, x, 0), g.at(y, x, 1));
      ASSERT_EQ(g.at(y, x, 1), g.at(y, x, 2));
    }
}

TEST(WeakAugment, BlurMatchesDirectConvolution) {
  Rng rng(9);
  for (double sigma : {0.3, 0.8, 1.0}) {
    const Image x = random_image(12, 20, 3, rng);
    const Image got = gaussian_blur(x, sigma);
    const Image want = blur_oracle(x, sigma);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got.data()[i], want.data()[i], 1e-5);
  }
}

TEST(WeakAugment, BlurImpulsePreservesMass) {
  Image impulse(21, 21, 1, 0.0f);
  impulse.at(10, 10, 0) = 1.0f;
  const Image got = gaussian_blur(impulse, 0.8);
  const Image want = blur_oracle(impulse, 0.8);
  double s = 0.0, s_oracle = 0.0;
  for (float v : got.data()) s += v;
  for (float v : want.data()) s_oracle += v;
  EXPECT_NEAR(s, 1.0, 1e-3);
  EXPECT_NEAR(s, s_oracle, 1e-5);
}

TEST(Geometric, IdentityParameters) {
  Rng rng(10);
  const Image x = random_image(32, 128, 3, rng);
  EXPECT_EQ(warp_affine(x, AffineParams{}), x);
  const Image zero_rot = warp_affine(x, AffineParams{0.0, 0.0, 1.0 + 1e-12});
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(zero_rot.data()[i], x.data()[i], 1e-6);
}

TEST(Geometric, RotationRoundTripOnText) {
  // Measured on rendered text rather than noise: bilinear resampling of white noise has no
  // smoothness for the 0.05 tolerance to refer to.
  Rng rng(11);
  const StyleRanges ranges;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Image x = render_text_image("text" + std::to_string(i), sample_style(ranges, rng), rng);
    const Image back = warp_affine(warp_affine(x, AffineParams{15.0, 0.0, 1.0}), AffineParams{-15.0, 0.0, 1.0});
    worst = std::max(worst, mae(back, x));
  }
  EXPECT_LT(worst, 0.05);
}

TEST(Geometric, SampledWarpsStayInRange) {
  Rng rng(12);
  const Image x = random_image(32, 128, 3, rng);
  for (int i = 0; i < 10; ++i) {
    const Image w = augment_geometric(x, GeometricAugmentConfig{}, rng);
    EXPECT_TRUE(w.same_shape(x));
    EXPECT_TRUE(w.in_range());
  }
}
