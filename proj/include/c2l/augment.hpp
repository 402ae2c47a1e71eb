#pragma once

#include <cstddef>
#include <vector>

#include "c2l/rng.hpp"
#include "c2l/tensor.hpp"

namespace c2l {

// Batch of images [Z x C x H x W] with pixel values in [0, 1].
class ImageBatch {
 public:
  ImageBatch() = default;
  /// Validates rank and pixel range.
  explicit ImageBatch(Tensor<float> pixels);

  const Tensor<float>& pixels() const { return pixels_; }
  std::size_t size() const { return pixels_.dim(0); }
  std::size_t channels() const { return pixels_.dim(1); }
  std::size_t height() const { return pixels_.dim(2); }
  std::size_t width() const { return pixels_.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }

  std::span<const float> image(std::size_t i) const {
    return pixels_.data().subspan(i * image_size(), image_size());
  }

  friend bool operator==(const ImageBatch&, const ImageBatch&) = default;

 private:
  Tensor<float> pixels_;
};

// One image, channel-major.
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct AugmentConfig {
  bool crop = true;
  double crop_scale_min = 0.6;  // fraction of image area kept
  double crop_scale_max = 1.0;
  bool rotate = true;
  double rotation_degrees = 10.0;
  bool hflip = true;
  double hflip_prob = 0.5;
  bool grayscale = true;
  bool cutout = true;
  std::size_t cutout_count = 1;
  double cutout_fraction = 0.25;  // hole side relative to min(H, W)

  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Every pipeline stage switched off.
AugmentConfig identity_augment();

Image extract_image(const ImageBatch& batch, std::size_t index);

/// Crops the window [top, top+h) x [left, left+w) and resizes it back to the
/// source size with bilinear sampling. Throws if the window is under 1 px.
Image crop_resize(const Image& image, double top, double left, double crop_h, double crop_w);

/// Rotation about the image centre with bilinear sampling; samples outside
/// the source are 0.
Image rotate(const Image& image, double degrees);

Image hflip(const Image& image);

/// Replaces every channel with the channel mean (ITU-R 601 weights for RGB).
/// Identity on single-channel images.
Image grayscale(const Image& image);

/// Zeroes the square of side `side` whose top-left corner is
/// (center_y - side/2, center_x - side/2), clipped to the image.
Image cutout_at(const Image& image, long center_y, long center_x, std::size_t side);

/// Cutout with side round(fraction * min(H, W)) at a uniformly drawn centre.
Image cutout(const Image& image, RngStream& rng, double fraction);

/// Per-sample pipeline crop -> rotate -> hflip -> grayscale -> cutout with a
/// final clamp to [0, 1]. Sample i, stage k draws from the stream
/// {base.seed, base.iteration, base.batch, i, k}, so results do not depend
/// on processing order.
ImageBatch augment_batch(const ImageBatch& batch, const StreamKey& base, const AugmentConfig& config);

/// Single-sample pipeline used by augment_batch.
Image augment_image(const Image& image, const StreamKey& key, const AugmentConfig& config);

}  // namespace c2l
