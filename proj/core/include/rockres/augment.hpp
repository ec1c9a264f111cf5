#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rockres/image.hpp"

namespace rockres {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Parameter ranges for the offline augmentation pipeline. Every output is a
/// pure function of (seed, sample seed, input image).
struct AugmentSpec {
  Range rotation_degrees{-30.0, 30.0};
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  Range crop_scale{0.7, 1.0};  // fraction of the (rotated) image area kept
  std::int64_t output_height = 224;
  std::int64_t output_width = 224;
  Range brightness{0.8, 1.2};
  Range contrast{0.8, 1.2};
  Range saturation{0.8, 1.2};
  Range hue{-18.0, 18.0};  // degrees
  int copies_per_image = 4;
  std::uint64_t seed = 0;

  void validate() const;
  /// Leaves an image of the given size untouched.
  static AugmentSpec identity(std::int64_t width, std::int64_t height);

  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// Parameters drawn for one sample, in pipeline order.
struct AugmentDraw {
  double angle = 0.0;
  bool hflip = false;
  bool vflip = false;
  double crop_scale = 1.0;
  double crop_x = 0.0;  // position fractions in [0, 1)
  double crop_y = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
};

AugmentDraw draw_augmentation(const AugmentSpec& spec, std::uint64_t sample_seed);

/// rotate -> hflip -> vflip -> crop -> resize -> brightness -> contrast ->
/// saturation -> hue.
Image augment_one(const Image& img, const AugmentSpec& spec, std::uint64_t sample_seed);
Image apply_augmentation(const Image& img, const AugmentDraw& draw, std::int64_t out_width,
                         std::int64_t out_height);

// Individual stages. Color stages round to nearest and clamp to [0, 255].

/// Rotation about the image center, bilinear sampling, mirror-reflected
/// borders. Output keeps the input size.
Image rotate(const Image& img, double degrees);
Image hflip(const Image& img);
Image vflip(const Image& img);
Image crop(const Image& img, std::int64_t x0, std::int64_t y0, std::int64_t width,
           std::int64_t height);
/// p * f
Image adjust_brightness(const Image& img, double factor);
/// (p - m) * f + m, m = mean luma of the whole image
Image adjust_contrast(const Image& img, double factor);
/// luma + (p - luma) * f, per pixel
Image adjust_saturation(const Image& img, double factor);
/// Hue rotation in HSV space.
Image adjust_hue(const Image& img, double degrees);

/// 0.299 R + 0.587 G + 0.114 B
double luma(double r, double g, double b);

struct ManifestEntry {
  std::string output_path;  // relative to the destination root
  std::string source_path;  // relative to the source root
  std::string class_name;
  std::string sample_seed;  // empty for the resized original
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> skipped;  // "<source>: <reason>"
  std::size_t source_images = 0;

  /// CSV with header output_path,source_path,class,sample_seed; skipped
  /// inputs follow as "# skipped ..." comment lines.
  std::string to_csv() const;
};

inline constexpr const char* kManifestFile = "manifest.csv";

/// Writes each source image resized to the output size plus
/// `copies_per_image` augmented variants into the same class directory under
/// `dst_root`, and the manifest to dst_root/manifest.csv.
Manifest expand_dataset(const std::filesystem::path& src_root,
                        const std::filesystem::path& dst_root, const AugmentSpec& spec);

}  // namespace rockres
