#include "c2l/data_io.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "c2l/rng.hpp"

namespace c2l {

namespace fs = std::filesystem;

void write_pgm(const fs::path& path, const GrayImage8& image) {
  if (image.pixels.size() != image.height * image.width) throw DataError("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t parse_size(const std::string& tok, const fs::path& path) {
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header field '" + tok + "'");
  }
}

}  // namespace

GrayImage8 read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  if (pgm_token(in) != "P5") throw DataError(path.string() + ": not a binary PGM (P5) file");
  GrayImage8 img;
  img.width = parse_size(pgm_token(in), path);
  img.height = parse_size(pgm_token(in), path);
  const std::size_t maxval = parse_size(pgm_token(in), path);
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  if (img.width == 0 || img.height == 0) throw DataError(path.string() + ": empty image");
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  return img;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DatasetManifest read_manifest(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest " + csv_path.string());
  DatasetManifest m;
  m.root = csv_path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DataError(csv_path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv(line);
  if (header.empty() || header[0] != "path") throw DataError(csv_path.string() + ": header must start with 'path'");
  m.class_names.assign(header.begin() + 1, header.end());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw DataError(csv_path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    ManifestEntry e{cells[0], {}};
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c] != "0" && cells[c] != "1") {
        throw DataError(csv_path.string() + ":" + std::to_string(lineno) + ": label '" + cells[c] + "' is not 0/1");
      }
      e.labels.push_back(cells[c] == "1" ? 1 : 0);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& csv_path, const DatasetManifest& manifest) {
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot open " + csv_path.string() + " for writing");
  out << "path";
  for (const auto& c : manifest.class_names) out << "," << c;
  out << "\n";
  for (const auto& e : manifest.entries) {
    if (e.labels.size() != manifest.class_names.size()) throw DataError("manifest entry label count mismatch");
    out << e.path;
    for (auto l : e.labels) out << "," << static_cast<int>(l);
    out << "\n";
  }
  if (!out) throw DataError("failed writing " + csv_path.string());
}

Dataset Dataset::load(const fs::path& manifest_csv) {
  const DatasetManifest m = read_manifest(manifest_csv);
  if (m.entries.empty()) throw DataError(manifest_csv.string() + ": manifest lists no images");
  Dataset d;
  d.class_names_ = m.class_names;
  d.count_ = m.entries.size();
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    GrayImage8 img;
    try {
      img = read_pgm(m.root / e.path);
    } catch (const DataError& err) {
      throw DataError("manifest entry " + std::to_string(i) + " (" + e.path + "): " + err.what());
    }
    if (i == 0) {
      d.height_ = img.height;
      d.width_ = img.width;
      d.pixels_.reserve(d.count_ * img.pixels.size());
    } else if (img.height != d.height_ || img.width != d.width_) {
      throw DataError("manifest entry " + std::to_string(i) + " (" + e.path + "): size " + std::to_string(img.height) +
                      "x" + std::to_string(img.width) + " differs from " + std::to_string(d.height_) + "x" +
                      std::to_string(d.width_));
    }
    d.pixels_.insert(d.pixels_.end(), img.pixels.begin(), img.pixels.end());
    d.labels_.insert(d.labels_.end(), e.labels.begin(), e.labels.end());
  }
  return d;
}

Dataset Dataset::from_images(std::vector<GrayImage8> images, std::vector<std::vector<std::uint8_t>> labels,
                             std::vector<std::string> class_names) {
  if (images.empty()) throw DataError("dataset needs at least one image");
  if (!class_names.empty() && labels.size() != images.size()) throw DataError("one label row per image required");
  Dataset d;
  d.count_ = images.size();
  d.height_ = images[0].height;
  d.width_ = images[0].width;
  d.class_names_ = std::move(class_names);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != d.height_ || images[i].width != d.width_) throw DataError("image size mismatch");
    d.pixels_.insert(d.pixels_.end(), images[i].pixels.begin(), images[i].pixels.end());
    if (!d.class_names_.empty()) {
      if (labels[i].size() != d.class_names_.size()) throw DataError("label row length mismatch");
      d.labels_.insert(d.labels_.end(), labels[i].begin(), labels[i].end());
    }
  }
  return d;
}

ImageBatch Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t plane = height_ * width_;
  Tensor<float> t({indices.size(), 1, height_, width_});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = raw(indices[k]);
    float* dst = t.ptr() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
  }
  return ImageBatch(std::move(t));
}

ImageBatch Dataset::batch_range(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return batch(idx);
}

Tensor<double> Dataset::label_matrix(std::span<const std::size_t> indices) const {
  if (!labeled()) throw DataError("dataset has no labels");
  Tensor<double> t({indices.size(), num_classes()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    for (std::size_t c = 0; c < num_classes(); ++c) t[k * num_classes() + c] = label(indices[k], c);
  }
  return t;
}

void SynthConfig::validate() const {
  if (num_unlabeled < 1 || num_labeled_train < 1 || num_labeled_test < 1) {
    throw std::invalid_argument("synth: every split needs at least one image");
  }
  if (height < 16 || width < 16) throw std::invalid_argument("synth: images must be at least 16x16");
  if (noise_sigma < 0 || intensity_jitter < 0) throw std::invalid_argument("synth: noise settings must be >= 0");
  if (structure_min < 1 || structure_max < structure_min) throw std::invalid_argument("synth: bad structure count");
  if (contrast_min < 0 || contrast_max < contrast_min) throw std::invalid_argument("synth: bad contrast range");
  if (background_min < 0 || background_max < background_min || body_min < 0 || body_max < body_min) {
    throw std::invalid_argument("synth: bad background or body range");
  }
  if (disc_radius_min < 1 || disc_radius_max < disc_radius_min || bar_length_min < 1 ||
      bar_length_max < bar_length_min) {
    throw std::invalid_argument("synth: bad structure size range");
  }
}

namespace {

// Unit directions at multiples of pi/16, scaled by 1024.
constexpr std::array<std::array<std::int64_t, 2>, 16> kDirections{{
    {1024, 0}, {1004, 200}, {946, 392}, {851, 569}, {724, 724}, {569, 851}, {392, 946}, {200, 1004},
    {0, 1024}, {-200, 1004}, {-392, 946}, {-569, 851}, {-724, 724}, {-851, 569}, {-946, 392}, {-1004, 200},
}};

constexpr std::int64_t kSub = 16;  // sub-gray-level fixed point

std::int64_t draw(RngStream& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

}  // namespace

GrayImage8 synth_image(const SynthConfig& config, std::size_t class_id, std::uint64_t split, std::uint64_t index) {
  RngStream rng({config.seed, split, stream::kSynth, index, 0});
  const auto h = static_cast<std::int64_t>(config.height), w = static_cast<std::int64_t>(config.width);
  std::vector<std::int64_t> field(static_cast<std::size_t>(h * w), 0);
  auto at = [&](std::int64_t y, std::int64_t x) -> std::int64_t& { return field[static_cast<std::size_t>(y * w + x)]; };

  const std::int64_t background = kSub * draw(rng, config.background_min, config.background_max);
  const std::int64_t offset = kSub * draw(rng, -config.intensity_jitter, config.intensity_jitter);

  // Body: soft ellipse with quadratic falloff.
  const std::int64_t bcx = w / 2 + draw(rng, -w / 10, w / 10);
  const std::int64_t bcy = h / 2 + draw(rng, -h / 10, h / 10);
  const std::int64_t ax = std::max<std::int64_t>(4, w * draw(rng, 30, 42) / 100);
  const std::int64_t ay = std::max<std::int64_t>(4, h * draw(rng, 36, 46) / 100);
  const std::int64_t body = kSub * draw(rng, config.body_min, config.body_max);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t dx = x - bcx, dy = y - bcy;
      const std::int64_t r2 = dx * dx * 1024 / (ax * ax) + dy * dy * 1024 / (ay * ay);
      at(y, x) = background + offset + (r2 < 1024 ? body * (1024 - r2) / 1024 : 0);
    }
  }

  const std::int64_t count = draw(rng, config.structure_min, config.structure_max);
  for (std::int64_t s = 0; s < count; ++s) {
    const std::int64_t cx = w / 4 + draw(rng, 0, w / 2);
    const std::int64_t cy = h / 4 + draw(rng, 0, h / 2);
    const std::int64_t amp = kSub * draw(rng, config.contrast_min, config.contrast_max);
    if (class_id == 0) {
      const std::int64_t r = draw(rng, config.disc_radius_min, config.disc_radius_max);
      const std::int64_t r2 = r * r;
      for (std::int64_t y = std::max<std::int64_t>(0, cy - r); y <= std::min(h - 1, cy + r); ++y) {
        for (std::int64_t x = std::max<std::int64_t>(0, cx - r); x <= std::min(w - 1, cx + r); ++x) {
          const std::int64_t d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 <= r2) at(y, x) += amp * (2 * r2 - d2) / (2 * r2);
        }
      }
    } else {
      const auto& dir = kDirections[static_cast<std::size_t>(draw(rng, 0, 15))];
      const std::int64_t half_len = 1024 * draw(rng, config.bar_length_min, config.bar_length_max);
      const std::int64_t half_width = 1024 + 512 * draw(rng, 0, 1);
      const std::int64_t reach = half_len / 1024 + 2;
      for (std::int64_t y = std::max<std::int64_t>(0, cy - reach); y <= std::min(h - 1, cy + reach); ++y) {
        for (std::int64_t x = std::max<std::int64_t>(0, cx - reach); x <= std::min(w - 1, cx + reach); ++x) {
          const std::int64_t dx = x - cx, dy = y - cy;
          const std::int64_t along = dx * dir[0] + dy * dir[1];
          const std::int64_t across = -dx * dir[1] + dy * dir[0];
          if (std::abs(along) <= half_len && std::abs(across) <= half_width) at(y, x) += amp;
        }
      }
    }
  }

  // Approximately Gaussian noise: centred sum of four uniforms on [0, 4096),
  // whose standard deviation is 4096 / sqrt(3) ~= 2365.
  GrayImage8 img{config.height, config.width, std::vector<std::uint8_t>(field.size())};
  for (std::size_t i = 0; i < field.size(); ++i) {
    std::int64_t s = 0;
    for (int k = 0; k < 4; ++k) s += static_cast<std::int64_t>(rng.below(4096));
    const std::int64_t noise = (s - 8192) * config.noise_sigma * kSub / 2365;
    const std::int64_t v = (field[i] + noise + kSub / 2) / kSub;
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
  }
  return img;
}

namespace {

void write_split(const SynthConfig& config, const fs::path& dir, std::uint64_t split, std::size_t count,
                 bool labeled) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.root = dir;
  if (labeled) {
    for (std::size_t c = 0; c < kSynthClasses; ++c) m.class_names.push_back("label_" + std::to_string(c));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t class_id = i % kSynthClasses;
    char name[32];
    std::snprintf(name, sizeof(name), "img_%06zu.pgm", i);
    write_pgm(dir / name, synth_image(config, class_id, split, i));
    ManifestEntry e{name, {}};
    if (labeled) {
      for (std::size_t c = 0; c < kSynthClasses; ++c) e.labels.push_back(c == class_id ? 1 : 0);
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.csv", m);
}

}  // namespace

void synth_generate(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  write_split(config, out_dir / "pretrain", 0, config.num_unlabeled, false);
  write_split(config, out_dir / "train", 1, config.num_labeled_train, true);
  write_split(config, out_dir / "test", 2, config.num_labeled_test, true);
}

}  // namespace c2l
