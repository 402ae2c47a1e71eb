#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "c2l/augment.hpp"
#include "c2l/tensor.hpp"

namespace c2l {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const GrayImage8&, const GrayImage8&) = default;
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage8& image);
GrayImage8 read_pgm(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;                  // relative to the manifest's directory
  std::vector<std::uint8_t> labels;  // empty for unlabeled manifests
};

// CSV with header `path[,label_0,...,label_{C-1}]`. The label column names
// are the class names.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  bool labeled() const { return !class_names.empty(); }
};

DatasetManifest read_manifest(const std::filesystem::path& csv_path);
void write_manifest(const std::filesystem::path& csv_path, const DatasetManifest& manifest);

// In-memory 8-bit dataset in manifest order.
class Dataset {
 public:
  Dataset() = default;

  /// Loads every manifest entry. Missing or undecodable files and size
  /// mismatches raise DataError naming the entry.
  static Dataset load(const std::filesystem::path& manifest_csv);

  static Dataset from_images(std::vector<GrayImage8> images, std::vector<std::vector<std::uint8_t>> labels,
                             std::vector<std::string> class_names);

  std::size_t size() const { return count_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool labeled() const { return !class_names_.empty(); }
  std::size_t num_classes() const { return class_names_.size(); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::span<const std::uint8_t> raw(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels_).subspan(i * height_ * width_, height_ * width_);
  }
  std::uint8_t label(std::size_t i, std::size_t c) const { return labels_[i * class_names_.size() + c]; }

  /// Pixels scaled to [0, 1] as a [n x 1 x H x W] batch.
  ImageBatch batch(std::span<const std::size_t> indices) const;
  ImageBatch batch_range(std::size_t begin, std::size_t end) const;

  /// [n x C] 0/1 label matrix for the given rows.
  Tensor<double> label_matrix(std::span<const std::size_t> indices) const;

 private:
  std::size_t count_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::vector<std::string> class_names_;
  std::vector<std::uint8_t> labels_;
};

// Recipe for the synthetic radiograph-like corpus. Every image holds a soft
// elliptical "body" on a dark background plus a few class-specific
// structures: round blobs for class 0, thin bars for class 1. All
// arithmetic on the write path is integer so a seed maps to the same bytes
// on every platform.
struct SynthConfig {
  std::size_t num_unlabeled = 2000;
  std::size_t num_labeled_train = 200;
  std::size_t num_labeled_test = 200;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  int noise_sigma = 16;        // 8-bit units
  int intensity_jitter = 0;    // +/- range of the global offset, 8-bit units
  int structure_min = 1;       // structures per image
  int structure_max = 8;
  int contrast_min = 20;       // structure amplitude range, 8-bit units
  int contrast_max = 90;
  int background_min = 25;     // flat background level
  int background_max = 25;
  int body_min = 55;           // peak brightness added by the body ellipse
  int body_max = 55;
  int disc_radius_min = 3;     // class 0 structures
  int disc_radius_max = 6;
  int bar_length_min = 7;      // class 1 structures, half-length in pixels
  int bar_length_max = 12;

  void validate() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

inline constexpr std::size_t kSynthClasses = 2;

/// One image of the given class from the sample's own stream.
GrayImage8 synth_image(const SynthConfig& config, std::size_t class_id, std::uint64_t split, std::uint64_t index);

/// Writes pretrain/, train/, test/ under `out_dir`, each with manifest.csv.
void synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace c2l
