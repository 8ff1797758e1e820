#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advedge/image_io.hpp"
#include "advedge/rng.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabeledDataset {
  std::vector<Tensor<float>> images;  // each [C,H,W] in [0,1]
  std::vector<int> labels;
  std::vector<std::string> ids;
  int class_count = 0;

  std::size_t size() const { return images.size(); }
};

namespace synth {

// Soft coverage from a signed distance (about one pixel of anti-aliasing).
inline float cover(float d) { return std::min(1.0f, std::max(0.0f, 0.5f - d)); }

inline float sd_disk(float dx, float dy, float r) { return std::sqrt(dx * dx + dy * dy) - r; }
inline float sd_ring(float dx, float dy, float r, float t) { return std::abs(sd_disk(dx, dy, r)) - t; }
inline float sd_square(float dx, float dy, float a) { return std::max(std::abs(dx), std::abs(dy)) - a; }
inline float sd_frame(float dx, float dy, float a, float t) { return std::abs(sd_square(dx, dy, a)) - t; }
inline float sd_diamond(float dx, float dy, float a) { return (std::abs(dx) + std::abs(dy)) * 0.70710678f - a; }
inline float sd_plus(float dx, float dy, float arm, float t) {
  const float bar_h = std::max(std::abs(dy) - t, std::abs(dx) - arm);
  const float bar_v = std::max(std::abs(dx) - t, std::abs(dy) - arm);
  return std::min(bar_h, bar_v);
}
inline float sd_cross(float dx, float dy, float arm, float t) {
  const float u = (dx + dy) * 0.70710678f;
  const float v = (dx - dy) * 0.70710678f;
  return sd_plus(u, v, arm, t);
}
inline float sd_triangle(float dx, float dy, float a) {
  // point-up isosceles triangle; three half-plane distances, inside negative
  const float e0 = dy - 0.8f * a;                          // bottom edge
  const float e1 = (-dy - 0.9f * a + 1.5f * dx) * 0.5547f;  // right edge
  const float e2 = (-dy - 0.9f * a - 1.5f * dx) * 0.5547f;  // left edge
  return std::max(e0, std::max(e1, e2));
}

}  // namespace synth

constexpr int kSynthClasses = 10;
constexpr int kSynthExtent = 28;

/// Renders one 28x28 grayscale sample of the given class. Shapes carry
/// position/size/contrast jitter plus pixel noise; the task is learnable to
/// high accuracy by a small CNN while keeping decision margins modest.
inline Tensor<float> render_synthetic(int label, Rng& rng) {
  using namespace synth;
  const int n = kSynthExtent;
  const float cx = n / 2.0f - 0.5f + rng.uniform(-2.5f, 2.5f);
  const float cy = n / 2.0f - 0.5f + rng.uniform(-2.5f, 2.5f);
  const float background = rng.uniform(0.10f, 0.30f);
  const float contrast = rng.uniform(0.25f, 0.45f);
  const float noise_sd = 0.08f;

  const float r = rng.uniform(5.0f, 8.0f);
  const float thick = rng.uniform(1.0f, 1.8f);
  const float arm = rng.uniform(5.5f, 8.5f);
  const float period = rng.uniform(4.0f, 6.0f);
  const float phase = rng.uniform(0.0f, period);
  const float patch = rng.uniform(6.5f, 9.0f);

  Tensor<float> img({1, n, n});
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const float dx = x - cx;
      const float dy = y - cy;
      float c = 0.0f;
      switch (label) {
        case 0: c = cover(sd_disk(dx, dy, r)); break;
        case 1: c = cover(sd_ring(dx, dy, r + 1.0f, thick)); break;
        case 2: c = cover(sd_square(dx, dy, r * 0.85f)); break;
        case 3: c = cover(sd_frame(dx, dy, r * 0.95f, thick)); break;
        case 4: c = cover(sd_triangle(dx, dy, r + 1.0f)); break;
        case 5: c = cover(sd_plus(dx, dy, arm, thick)); break;
        case 6: c = cover(sd_cross(dx, dy, arm, thick)); break;
        case 7: {  // horizontal stripes in a centered patch
          const float s = std::sin(6.28318531f * (y - phase) / period);
          c = cover(sd_square(dx, dy, patch)) * (0.5f + 0.5f * std::tanh(3.0f * s));
          break;
        }
        case 8: {  // vertical stripes in a centered patch
          const float s = std::sin(6.28318531f * (x - phase) / period);
          c = cover(sd_square(dx, dy, patch)) * (0.5f + 0.5f * std::tanh(3.0f * s));
          break;
        }
        case 9: c = cover(sd_diamond(dx, dy, r + 1.5f)); break;
        default: throw DatasetError("render_synthetic: label out of range");
      }
      float v = background + contrast * c + noise_sd * rng.normal();
      img.at3(0, y, x) = std::min(1.0f, std::max(0.0f, v));
    }
  }
  return img;
}

/// Balanced synthetic dataset: labels cycle 0..9, one rng stream per sample.
inline LabeledDataset make_synthetic_dataset(int count, std::uint32_t seed) {
  LabeledDataset ds;
  ds.class_count = kSynthClasses;
  ds.images.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int label = i % kSynthClasses;
    Rng rng(derive_seed(seed, 0x73796e7468ULL ^ static_cast<std::uint64_t>(i)));
    ds.images.push_back(render_synthetic(label, rng));
    ds.labels.push_back(label);
    ds.ids.push_back("synth" + std::to_string(i));
  }
  return ds;
}

/// Directory of 8-bit PNGs named <label>_<id>.png.
inline LabeledDataset load_png_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("dataset path '" + dir + "' is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DatasetError("dataset directory '" + dir + "' contains no .png files");

  LabeledDataset ds;
  int max_label = -1;
  for (const std::string& name : names) {
    const auto us = name.find('_');
    if (us == std::string::npos || us == 0)
      throw DatasetError("dataset file '" + name + "' is not named <label>_<id>.png");
    int label = -1;
    try {
      label = std::stoi(name.substr(0, us));
    } catch (const std::exception&) {
      throw DatasetError("dataset file '" + name + "' has a non-numeric label prefix");
    }
    if (label < 0) throw DatasetError("dataset file '" + name + "' has a negative label");
    ds.images.push_back(read_png_gray((fs::path(dir) / name).string()));
    ds.labels.push_back(label);
    ds.ids.push_back(name.substr(0, name.size() - 4));
    max_label = std::max(max_label, label);
  }
  ds.class_count = max_label + 1;
  for (std::size_t i = 1; i < ds.images.size(); ++i)
    if (!ds.images[i].same_shape(ds.images[0]))
      throw DatasetError("dataset file '" + names[i] + "' has shape " + shape_str(ds.images[i].shape()) +
                         ", expected " + shape_str(ds.images[0].shape()));
  return ds;
}

/// Writes a dataset as <label>_<id>.png files.
inline void save_png_dir(const LabeledDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string name = std::to_string(ds.labels[i]) + "_" + ds.ids[i] + ".png";
    write_png((fs::path(dir) / name).string(), ds.images[i]);
  }
}

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw DatasetError("'" + path + "': truncated IDX header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace detail

/// IDX image/label pair (the classic big-endian u8 format).
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DatasetError("cannot open IDX image file '" + images_path + "'");
  if (detail::read_be32(imgs, images_path) != 0x00000803u)
    throw DatasetError("'" + images_path + "': bad IDX image magic");
  const std::uint32_t count = detail::read_be32(imgs, images_path);
  const std::uint32_t rows = detail::read_be32(imgs, images_path);
  const std::uint32_t cols = detail::read_be32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw DatasetError("cannot open IDX label file '" + labels_path + "'");
  if (detail::read_be32(labs, labels_path) != 0x00000801u)
    throw DatasetError("'" + labels_path + "': bad IDX label magic");
  const std::uint32_t label_count = detail::read_be32(labs, labels_path);
  if (label_count != count)
    throw DatasetError("IDX pair mismatch: " + std::to_string(count) + " images vs " + std::to_string(label_count) +
                       " labels");

  LabeledDataset ds;
  int max_label = -1;
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(imgs.gcount()) != buf.size())
      throw DatasetError("'" + images_path + "': truncated at image " + std::to_string(i));
    Tensor<float> img({1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::int64_t p = 0; p < img.size(); ++p) img[p] = static_cast<float>(buf[static_cast<std::size_t>(p)]) / 255.0f;
    char lab;
    labs.read(&lab, 1);
    if (labs.gcount() != 1) throw DatasetError("'" + labels_path + "': truncated at label " + std::to_string(i));
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<unsigned char>(lab));
    ds.ids.push_back("idx" + std::to_string(i));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.class_count = max_label + 1;
  return ds;
}

}  // namespace advedge
