#include "ssm/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssm {

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("image buffer size does not match H*W*C");
  }
}

bool Image::in_range() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

InversionKind parse_inversion_kind(std::string_view name) {
  if (name == "HFlip" || name == "hflip" || name == "HS") return InversionKind::HFlip;
  if (name == "VFlip" || name == "vflip" || name == "VS") return InversionKind::VFlip;
  if (name == "Rotate180" || name == "rot180" || name == "RS") return InversionKind::Rotate180;
  throw std::invalid_argument("unknown inversion kind '" + std::string(name) + "'");
}

std::string to_string(InversionKind kind) {
  switch (kind) {
    case InversionKind::HFlip: return "HFlip";
    case InversionKind::VFlip: return "VFlip";
    case InversionKind::Rotate180: return "Rotate180";
  }
  return "?";
}

DirectionIndex::DirectionIndex(int value) : value_(value) {
  if (value < 0 || value >= kCount) {
    throw std::out_of_range("direction index must be in [0, 3], got " + std::to_string(value));
  }
}

namespace {

template <typename MapFn>
Image remap_pixels(const Image& img, MapFn source_of) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto [sy, sx] = source_of(y, x);
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

}  // namespace

Image hflip(const Image& img) {
  const int w = img.width();
  return remap_pixels(img, [w](int y, int x) { return std::pair{y, w - 1 - x}; });
}

Image vflip(const Image& img) {
  const int h = img.height();
  return remap_pixels(img, [h](int y, int x) { return std::pair{h - 1 - y, x}; });
}

Image rot180(const Image& img) {
  const int h = img.height();
  const int w = img.width();
  return remap_pixels(img, [h, w](int y, int x) { return std::pair{h - 1 - y, w - 1 - x}; });
}

Image invert(const Image& img, InversionKind kind) {
  switch (kind) {
    case InversionKind::HFlip: return hflip(img);
    case InversionKind::VFlip: return vflip(img);
    case InversionKind::Rotate180: return rot180(img);
  }
  throw std::invalid_argument("bad inversion kind");
}

Image superimpose(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("superimpose: shape mismatch");
  Image out(a.height(), a.width(), a.channels());
  auto da = a.data();
  auto db = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5f * (da[i] + db[i]);
  return out;
}

SuperimposedSample make_superimposed(const Image& img, std::optional<InversionKind> kind,
                                     const SuperimposeOptions& opts, Rng& rng) {
  if (!kind) {
    std::uniform_int_distribution<int> pick(1, 3);
    kind = static_cast<InversionKind>(pick(rng));
  }
  SuperimposedSample s = make_superimposed_with(img, invert(img, *kind), DirectionIndex::of(*kind), opts, rng);
  s.inversion_kind = kind;
  return s;
}

SuperimposedSample make_superimposed_with(const Image& img, const Image& other, DirectionIndex i_n,
                                          const SuperimposeOptions& opts, Rng& rng) {
  if (i_n.value() == 0) throw std::invalid_argument("inverted direction index must be 1..3");
  const Image x_s = superimpose(img, other);

  SuperimposedSample s;
  const WeakAugmentParams reg = sample_weak(opts.weak, rng);
  s.x_s_reg = apply_weak(x_s, reg);
  s.x_reg = apply_weak(img, reg);
  s.x_r_reg = apply_weak(other, reg);
  if (opts.irregular_view) {
    const WeakAugmentParams irr = sample_weak(opts.weak, rng);
    s.x_s_irr = augment_geometric(apply_weak(x_s, irr), opts.geometric, rng);
  } else {
    s.x_s_irr = s.x_s_reg;
  }
  s.i_p = DirectionIndex::original();
  s.i_n = i_n;
  return s;
}

}  // namespace ssm
