#include "c2l/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace c2l {

ImageBatch::ImageBatch(Tensor<float> pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 4) throw ShapeError("image batch must be [Z x C x H x W], got " + shape_str(pixels_.shape()));
  for (float v : pixels_.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("image batch pixel outside [0, 1]");
  }
}

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw std::invalid_argument("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw std::invalid_argument("augment: hflip_prob outside [0, 1]");
  if (!(cutout_fraction > 0.0 && cutout_fraction < 1.0)) {
    throw std::invalid_argument("augment: cutout_fraction must lie in (0, 1)");
  }
  if (!(rotation_degrees >= 0.0)) throw std::invalid_argument("augment: rotation_degrees must be >= 0");
}

AugmentConfig identity_augment() {
  AugmentConfig c;
  c.crop = c.rotate = c.hflip = c.grayscale = c.cutout = false;
  return c;
}

Image extract_image(const ImageBatch& batch, std::size_t index) {
  auto src = batch.image(index);
  return Image{batch.channels(), batch.height(), batch.width(), std::vector<float>(src.begin(), src.end())};
}

namespace {

// Bilinear sample with zero outside the image.
float sample_zero(const Image& img, std::size_t c, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double wy = y - fy, wx = x - fx;
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  auto px = [&](long yy, long xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  return static_cast<float>((1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                            wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1)));
}

// Bilinear sample with coordinates clamped to the image.
float sample_clamped(const Image& img, std::size_t c, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
  return static_cast<float>((1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                            wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1)));
}

// Stage indices within a sample's stream key.
enum Stage : std::uint64_t { kCrop = 0, kRotate = 1, kFlip = 2, kGray = 3, kCutout = 4 };

}  // namespace

Image crop_resize(const Image& image, double top, double left, double crop_h, double crop_w) {
  if (!(crop_h >= 1.0 && crop_w >= 1.0)) {
    throw std::invalid_argument("crop window below 1 px: " + std::to_string(crop_h) + "x" + std::to_string(crop_w));
  }
  Image out{image.channels, image.height, image.width, std::vector<float>(image.pixels.size())};
  const double sy = crop_h / static_cast<double>(image.height);
  const double sx = crop_w / static_cast<double>(image.width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      const double src_y = top + (static_cast<double>(y) + 0.5) * sy - 0.5;
      for (std::size_t x = 0; x < image.width; ++x) {
        const double src_x = left + (static_cast<double>(x) + 0.5) * sx - 0.5;
        out.at(c, y, x) = sample_clamped(image, c, src_y, src_x);
      }
    }
  }
  return out;
}

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  Image out{image.channels, image.height, image.width, std::vector<float>(image.pixels.size())};
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // Inverse map: rotate the output coordinate by -angle.
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (std::size_t c = 0; c < image.channels; ++c) out.at(c, y, x) = sample_zero(image, c, sy, sx);
    }
  }
  return out;
}

Image hflip(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
    }
  }
  return out;
}

Image grayscale(const Image& image) {
  if (image.channels == 1) return image;
  Image out = image;
  const std::size_t plane = image.height * image.width;
  for (std::size_t i = 0; i < plane; ++i) {
    double lum = 0.0;
    if (image.channels == 3) {
      lum = 0.299 * image.pixels[i] + 0.587 * image.pixels[plane + i] + 0.114 * image.pixels[2 * plane + i];
    } else {
      for (std::size_t c = 0; c < image.channels; ++c) lum += image.pixels[c * plane + i];
      lum /= static_cast<double>(image.channels);
    }
    for (std::size_t c = 0; c < image.channels; ++c) out.pixels[c * plane + i] = static_cast<float>(lum);
  }
  return out;
}

Image cutout_at(const Image& image, long center_y, long center_x, std::size_t side) {
  Image out = image;
  const long half = static_cast<long>(side) / 2;
  const long y0 = std::max(0L, center_y - half);
  const long x0 = std::max(0L, center_x - half);
  const long y1 = std::min(static_cast<long>(image.height), center_y - half + static_cast<long>(side));
  const long x1 = std::min(static_cast<long>(image.width), center_x - half + static_cast<long>(side));
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (long y = y0; y < y1; ++y) {
      for (long x = x0; x < x1; ++x) out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 0.0f;
    }
  }
  return out;
}

Image cutout(const Image& image, RngStream& rng, double fraction) {
  const auto side = static_cast<std::size_t>(
      std::lround(fraction * static_cast<double>(std::min(image.height, image.width))));
  const long cy = static_cast<long>(rng.below(image.height));
  const long cx = static_cast<long>(rng.below(image.width));
  return cutout_at(image, cy, cx, side);
}

Image augment_image(const Image& image, const StreamKey& key, const AugmentConfig& config) {
  auto stage_rng = [&](Stage s) {
    StreamKey k = key;
    k.op = s;
    return RngStream(k);
  };
  Image img = image;
  if (config.crop) {
    RngStream rng = stage_rng(kCrop);
    const double scale = rng.uniform(config.crop_scale_min, config.crop_scale_max);
    const double side = std::sqrt(scale);
    const double ch = side * static_cast<double>(img.height);
    const double cw = side * static_cast<double>(img.width);
    const double top = rng.uniform() * (static_cast<double>(img.height) - ch);
    const double left = rng.uniform() * (static_cast<double>(img.width) - cw);
    img = crop_resize(img, top, left, ch, cw);
  }
  if (config.rotate && config.rotation_degrees > 0.0) {
    RngStream rng = stage_rng(kRotate);
    img = rotate(img, rng.uniform(-config.rotation_degrees, config.rotation_degrees));
  }
  if (config.hflip) {
    RngStream rng = stage_rng(kFlip);
    if (rng.bernoulli(config.hflip_prob)) img = hflip(img);
  }
  if (config.grayscale) img = grayscale(img);
  if (config.cutout) {
    RngStream rng = stage_rng(kCutout);
    for (std::size_t i = 0; i < config.cutout_count; ++i) img = cutout(img, rng, config.cutout_fraction);
  }
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

ImageBatch augment_batch(const ImageBatch& batch, const StreamKey& base, const AugmentConfig& config) {
  config.validate();
  Tensor<float> out(batch.pixels().shape());
  const std::size_t n = batch.image_size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    StreamKey key = base;
    key.sample = i;
    key.op = 0;
    Image img = augment_image(extract_image(batch, i), key, config);
    std::copy(img.pixels.begin(), img.pixels.end(), out.ptr() + i * n);
  }
  return ImageBatch(std::move(out));
}

}  // namespace c2l
