#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

using Rng = std::mt19937_64;

// H x W x C raster, interleaved channels, values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);
  Image(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  // Finite and inside [0, 1].
  bool in_range() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

enum class InversionKind : int { HFlip = 1, VFlip = 2, Rotate180 = 3 };

InversionKind parse_inversion_kind(std::string_view name);
std::string to_string(InversionKind kind);

// Direction tag fed to the prompt generator: 0 = original view, 1..3 = inversions.
class DirectionIndex {
 public:
  static constexpr int kCount = 4;

  constexpr DirectionIndex() = default;
  explicit DirectionIndex(int value);
  static DirectionIndex original() { return DirectionIndex(0); }
  static DirectionIndex of(InversionKind kind) { return DirectionIndex(static_cast<int>(kind)); }

  int value() const { return value_; }
  friend bool operator==(DirectionIndex, DirectionIndex) = default;

 private:
  int value_ = 0;
};

Image hflip(const Image& img);
Image vflip(const Image& img);
Image rot180(const Image& img);
Image invert(const Image& img, InversionKind kind);

// Pixel average 0.5 * (a + b).
Image superimpose(const Image& a, const Image& b);

struct WeakAugmentConfig {
  double blur_prob = 0.3;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;
  double grayscale_prob = 0.2;
  double brightness_prob = 0.3;
  double brightness_delta = 0.2;  // factor drawn from [1 - delta, 1 + delta]

  static WeakAugmentConfig identity() { return {0, 0.1, 1.0, 0, 0, 0.2}; }
};

struct WeakAugmentParams {
  std::optional<double> blur_sigma;
  bool grayscale = false;
  float brightness = 1.0f;
};

WeakAugmentParams sample_weak(const WeakAugmentConfig& cfg, Rng& rng);
Image apply_weak(const Image& img, const WeakAugmentParams& params);
Image augment_weak(const Image& img, const WeakAugmentConfig& cfg, Rng& rng);

// Separable Gaussian blur, radius ceil(3 sigma), replicated border.
Image gaussian_blur(const Image& img, double sigma);
Image to_grayscale(const Image& img);

struct GeometricAugmentConfig {
  double perspective_prob = 0.5;
  double max_rotation_deg = 15.0;
  double max_shear_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_corner_shift = 0.1;  // fraction of width/height per corner
};

struct AffineParams {
  double rotation_deg = 0.0;
  double shear_deg = 0.0;
  double scale = 1.0;
};

struct GeometricParams {
  bool perspective = false;
  AffineParams affine;
  // Corner offsets (dx, dy) as fractions of width/height for TL, TR, BR, BL.
  std::array<std::pair<double, double>, 4> corner_shift{};
};

GeometricParams sample_geometric(const GeometricAugmentConfig& cfg, Rng& rng);
// Bilinear resampling about the image centre, border replication outside.
Image warp_affine(const Image& img, const AffineParams& params);
Image warp_perspective(const Image& img, const std::array<std::pair<double, double>, 4>& corner_shift);
Image apply_geometric(const Image& img, const GeometricParams& params);
Image augment_geometric(const Image& img, const GeometricAugmentConfig& cfg, Rng& rng);

struct SuperimposedSample {
  Image x_s_reg;
  Image x_reg;
  Image x_r_reg;
  Image x_s_irr;
  DirectionIndex i_p;
  DirectionIndex i_n;
  std::optional<InversionKind> inversion_kind;  // empty for non-symmetric ablation layers
};

struct SuperimposeOptions {
  WeakAugmentConfig weak;
  GeometricAugmentConfig geometric;
  bool irregular_view = true;  // false: x_s_irr is the regular view
};

// kind == nullopt draws one of the three inversions uniformly.
SuperimposedSample make_superimposed(const Image& img, std::optional<InversionKind> kind,
                                     const SuperimposeOptions& opts, Rng& rng);

// Same construction with an explicit second layer; used by ablation input modes.
SuperimposedSample make_superimposed_with(const Image& img, const Image& other, DirectionIndex i_n,
                                          const SuperimposeOptions& opts, Rng& rng);

}  // namespace ssm
