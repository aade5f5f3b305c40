#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "ssm/imaging.hpp"

namespace ssm {

namespace {

void clamp_unit(Image& img) {
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

bool coin(double p, Rng& rng) {
  if (p <= 0.0) return false;
  std::bernoulli_distribution d(std::min(p, 1.0));
  return d(rng);
}

double uniform(double lo, double hi, Rng& rng) {
  if (hi <= lo) return lo;
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  cv::Mat kernel = cv::getGaussianKernel(2 * radius + 1, sigma, CV_32F);
  cv::Mat out;
  cv::sepFilter2D(detail::to_mat(img), out, CV_32F, kernel, kernel, cv::Point(-1, -1), 0.0,
                  cv::BORDER_REPLICATE);
  return detail::from_mat(out);
}

Image to_grayscale(const Image& img) {
  if (img.channels() != 3) return img;
  Image out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float g = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = g;
    }
  }
  return out;
}

WeakAugmentParams sample_weak(const WeakAugmentConfig& cfg, Rng& rng) {
  WeakAugmentParams p;
  if (coin(cfg.blur_prob, rng)) p.blur_sigma = uniform(cfg.blur_sigma_min, cfg.blur_sigma_max, rng);
  p.grayscale = coin(cfg.grayscale_prob, rng);
  if (coin(cfg.brightness_prob, rng)) {
    p.brightness = static_cast<float>(uniform(1.0 - cfg.brightness_delta, 1.0 + cfg.brightness_delta, rng));
  }
  return p;
}

Image apply_weak(const Image& img, const WeakAugmentParams& params) {
  Image out = params.blur_sigma ? gaussian_blur(img, *params.blur_sigma) : img;
  if (params.grayscale) out = to_grayscale(out);
  if (params.brightness != 1.0f) {
    for (float& v : out.data()) v *= params.brightness;
  }
  clamp_unit(out);
  return out;
}

Image augment_weak(const Image& img, const WeakAugmentConfig& cfg, Rng& rng) {
  return apply_weak(img, sample_weak(cfg, rng));
}

GeometricParams sample_geometric(const GeometricAugmentConfig& cfg, Rng& rng) {
  GeometricParams p;
  p.perspective = coin(cfg.perspective_prob, rng);
  if (p.perspective) {
    for (auto& [dx, dy] : p.corner_shift) {
      dx = uniform(-cfg.max_corner_shift, cfg.max_corner_shift, rng);
      dy = uniform(-cfg.max_corner_shift, cfg.max_corner_shift, rng);
    }
  } else {
    p.affine.rotation_deg = uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, rng);
    p.affine.shear_deg = uniform(-cfg.max_shear_deg, cfg.max_shear_deg, rng);
    p.affine.scale = uniform(cfg.scale_min, cfg.scale_max, rng);
  }
  return p;
}

Image warp_affine(const Image& img, const AffineParams& params) {
  if (params.rotation_deg == 0.0 && params.shear_deg == 0.0 && params.scale == 1.0) return img;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double shear = std::tan(params.shear_deg * std::numbers::pi / 180.0);
  const double c = std::cos(theta) * params.scale;
  const double s = std::sin(theta) * params.scale;
  // A = R(theta) * S(scale) * [[1, shear], [0, 1]]
  const double a00 = c, a01 = c * shear - s;
  const double a10 = s, a11 = s * shear + c;
  const double cx = 0.5 * (img.width() - 1);
  const double cy = 0.5 * (img.height() - 1);
  cv::Mat m = (cv::Mat_<double>(2, 3) << a00, a01, cx - a00 * cx - a01 * cy,
               a10, a11, cy - a10 * cx - a11 * cy);
  cv::Mat out;
  cv::warpAffine(detail::to_mat(img), out, m, cv::Size(img.width(), img.height()), cv::INTER_LINEAR,
                 cv::BORDER_REPLICATE);
  Image result = detail::from_mat(out);
  clamp_unit(result);
  return result;
}

Image warp_perspective(const Image& img, const std::array<std::pair<double, double>, 4>& corner_shift) {
  const float w = static_cast<float>(img.width() - 1);
  const float h = static_cast<float>(img.height() - 1);
  const std::array<cv::Point2f, 4> src{cv::Point2f{0, 0}, {w, 0}, {w, h}, {0, h}};
  std::array<cv::Point2f, 4> dst{};
  bool identity = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto [dx, dy] = corner_shift[i];
    identity = identity && dx == 0.0 && dy == 0.0;
    dst[i] = src[i] + cv::Point2f(static_cast<float>(dx * w), static_cast<float>(dy * h));
  }
  if (identity) return img;
  cv::Mat m = cv::getPerspectiveTransform(src.data(), dst.data());
  cv::Mat out;
  cv::warpPerspective(detail::to_mat(img), out, m, cv::Size(img.width(), img.height()), cv::INTER_LINEAR,
                      cv::BORDER_REPLICATE);
  Image result = detail::from_mat(out);
  clamp_unit(result);
  return result;
}

Image apply_geometric(const Image& img, const GeometricParams& params) {
  return params.perspective ? warp_perspective(img, params.corner_shift) : warp_affine(img, params.affine);
}

Image augment_geometric(const Image& img, const GeometricAugmentConfig& cfg, Rng& rng) {
  return apply_geometric(img, sample_geometric(cfg, rng));
}

}  // namespace ssm
