#include "rockres/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rockres/dataset.hpp"
#include "rockres/errors.hpp"
#include "rockres/rng.hpp"

namespace fs = std::filesystem;

namespace rockres {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

void check_range(const Range& r, double lo, double hi, const char* name) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi) {
    throw ConfigError(std::string("augment.") + name + " must satisfy " + std::to_string(lo) +
                      " <= lo <= hi <= " + std::to_string(hi));
  }
}

double reflect(double c, std::int64_t size) {
  if (size == 1) return 0.0;
  const double period = 2.0 * static_cast<double>(size - 1);
  c = std::fmod(std::fabs(c), period);
  return c > static_cast<double>(size - 1) ? period - c : c;
}

template <typename F>
Image map_pixels(const Image& img, F f) {
  Image out = img;
  for (std::size_t p = 0; p < out.pixels.size(); p += 3) {
    double rgb[3] = {static_cast<double>(img.pixels[p]), static_cast<double>(img.pixels[p + 1]),
                     static_cast<double>(img.pixels[p + 2])};
    f(rgb);
    for (int c = 0; c < 3; ++c) out.pixels[p + static_cast<std::size_t>(c)] = to_byte(rgb[c]);
  }
  return out;
}

}  // namespace

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void AugmentSpec::validate() const {
  check_range(rotation_degrees, -180.0, 180.0, "rotation_degrees");
  if (hflip_prob < 0.0 || hflip_prob > 1.0) throw ConfigError("augment.hflip_prob must be in [0, 1]");
  if (vflip_prob < 0.0 || vflip_prob > 1.0) throw ConfigError("augment.vflip_prob must be in [0, 1]");
  check_range(crop_scale, 0.0, 1.0, "crop_scale");
  if (crop_scale.lo <= 0.0) throw ConfigError("augment.crop_scale must be > 0");
  if (output_height < 1 || output_width < 1) throw ConfigError("augment.output_size must be positive");
  check_range(brightness, 0.0, 10.0, "brightness");
  check_range(contrast, 0.0, 10.0, "contrast");
  check_range(saturation, 0.0, 10.0, "saturation");
  check_range(hue, -180.0, 180.0, "hue");
  if (copies_per_image < 0) throw ConfigError("augment.copies_per_image must be >= 0");
}

AugmentSpec AugmentSpec::identity(std::int64_t width, std::int64_t height) {
  AugmentSpec s;
  s.rotation_degrees = {0.0, 0.0};
  s.hflip_prob = 0.0;
  s.vflip_prob = 0.0;
  s.crop_scale = {1.0, 1.0};
  s.output_width = width;
  s.output_height = height;
  s.brightness = s.contrast = s.saturation = {1.0, 1.0};
  s.hue = {0.0, 0.0};
  return s;
}

AugmentDraw draw_augmentation(const AugmentSpec& spec, std::uint64_t sample_seed) {
  // Every draw happens unconditionally so each parameter always reads the
  // same counter position.
  CounterRng rng(spec.seed, sample_seed);
  AugmentDraw d;
  d.angle = rng.uniform(spec.rotation_degrees.lo, spec.rotation_degrees.hi);
  d.hflip = rng.bernoulli(spec.hflip_prob);
  d.vflip = rng.bernoulli(spec.vflip_prob);
  d.crop_scale = rng.uniform(spec.crop_scale.lo, spec.crop_scale.hi);
  d.crop_x = rng.uniform();
  d.crop_y = rng.uniform();
  d.brightness = rng.uniform(spec.brightness.lo, spec.brightness.hi);
  d.contrast = rng.uniform(spec.contrast.lo, spec.contrast.hi);
  d.saturation = rng.uniform(spec.saturation.lo, spec.saturation.hi);
  d.hue = rng.uniform(spec.hue.lo, spec.hue.hi);
  return d;
}

Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = static_cast<double>(img.width - 1) / 2.0;
  const double cy = static_cast<double>(img.height - 1) / 2.0;
  Image out(img.width, img.height);
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      // Inverse map: output pixel -> source coordinate.
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = reflect(cs * dx + sn * dy + cx, img.width);
      const double sy = reflect(-sn * dx + cs * dy + cy, img.height);
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto y0 = static_cast<std::int64_t>(std::floor(sy));
      const std::int64_t x1 = std::min(x0 + 1, img.width - 1);
      const std::int64_t y1 = std::min(y0 + 1, img.height - 1);
      const double wx = sx - static_cast<double>(x0), wy = sy - static_cast<double>(y0);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = to_byte(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.width, img.height);
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    }
  }
  return out;
}

Image vflip(const Image& img) {
  Image out(img.width, img.height);
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, img.height - 1 - y, c);
    }
  }
  return out;
}

Image crop(const Image& img, std::int64_t x0, std::int64_t y0, std::int64_t width,
           std::int64_t height) {
  width = std::clamp<std::int64_t>(width, 1, img.width);
  height = std::clamp<std::int64_t>(height, 1, img.height);
  x0 = std::clamp<std::int64_t>(x0, 0, img.width - width);
  y0 = std::clamp<std::int64_t>(y0, 0, img.height - height);
  Image out(width, height);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

Image adjust_brightness(const Image& img, double factor) {
  return map_pixels(img, [factor](double* p) {
    for (int c = 0; c < 3; ++c) p[c] *= factor;
  });
}

Image adjust_contrast(const Image& img, double factor) {
  double total = 0.0;
  for (std::size_t p = 0; p < img.pixels.size(); p += 3) {
    total += luma(img.pixels[p], img.pixels[p + 1], img.pixels[p + 2]);
  }
  const double m = total / static_cast<double>(img.width * img.height);
  return map_pixels(img, [factor, m](double* p) {
    for (int c = 0; c < 3; ++c) p[c] = (p[c] - m) * factor + m;
  });
}

Image adjust_saturation(const Image& img, double factor) {
  return map_pixels(img, [factor](double* p) {
    const double l = luma(p[0], p[1], p[2]);
    for (int c = 0; c < 3; ++c) p[c] = l + (p[c] - l) * factor;
  });
}

// Hexcone HSV with hue as a fraction of a turn, evaluated in the same order
// as Python's colorsys so results agree to the last bit; a different but
// equivalent formulation can round exact .5 channel values the other way.
Image adjust_hue(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  const double shift = degrees / 360.0;
  return map_pixels(img, [shift](double* p) {
    const double r = p[0] / 255.0, g = p[1] / 255.0, b = p[2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double v = mx;
    if (mx == mn) {
      for (int c = 0; c < 3; ++c) p[c] = v * 255.0;
      return;
    }
    const double s = (mx - mn) / mx;
    const double rc = (mx - r) / (mx - mn), gc = (mx - g) / (mx - mn), bc = (mx - b) / (mx - mn);
    double h = r == mx ? bc - gc : g == mx ? 2.0 + rc - bc : 4.0 + gc - rc;
    h = std::fmod(h / 6.0 + 1.0, 1.0);
    h = std::fmod(h + shift + 1.0, 1.0);
    const int i = static_cast<int>(h * 6.0);
    const double f = h * 6.0 - i;
    const double w = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    double rr, gg, bb;
    switch (i % 6) {
      case 0: rr = v, gg = t, bb = w; break;
      case 1: rr = q, gg = v, bb = w; break;
      case 2: rr = w, gg = v, bb = t; break;
      case 3: rr = w, gg = q, bb = v; break;
      case 4: rr = t, gg = w, bb = v; break;
      default: rr = v, gg = w, bb = q; break;
    }
    p[0] = rr * 255.0;
    p[1] = gg * 255.0;
    p[2] = bb * 255.0;
  });
}

Image apply_augmentation(const Image& img, const AugmentDraw& d, std::int64_t out_width,
                         std::int64_t out_height) {
  Image out = rotate(img, d.angle);
  if (d.hflip) out = hflip(out);
  if (d.vflip) out = vflip(out);
  const double side = std::sqrt(d.crop_scale);
  const auto cw = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(static_cast<double>(out.width) * side + 0.5)), 1, out.width);
  const auto ch = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(static_cast<double>(out.height) * side + 0.5)), 1, out.height);
  const auto x0 = static_cast<std::int64_t>(d.crop_x * static_cast<double>(out.width - cw + 1));
  const auto y0 = static_cast<std::int64_t>(d.crop_y * static_cast<double>(out.height - ch + 1));
  out = crop(out, x0, y0, cw, ch);
  out = resize_bilinear(out, out_width, out_height);
  out = adjust_brightness(out, d.brightness);
  out = adjust_contrast(out, d.contrast);
  out = adjust_saturation(out, d.saturation);
  return adjust_hue(out, d.hue);
}

Image augment_one(const Image& img, const AugmentSpec& spec, std::uint64_t sample_seed) {
  spec.validate();
  return apply_augmentation(img, draw_augmentation(spec, sample_seed), spec.output_width,
                            spec.output_height);
}

std::string Manifest::to_csv() const {
  std::ostringstream os;
  os << "output_path,source_path,class,sample_seed\n";
  for (const auto& e : entries) {
    os << e.output_path << ',' << e.source_path << ',' << e.class_name << ',' << e.sample_seed << '\n';
  }
  for (const auto& s : skipped) os << "# skipped " << s << '\n';
  return os.str();
}

Manifest expand_dataset(const fs::path& src_root, const fs::path& dst_root,
                        const AugmentSpec& spec) {
  spec.validate();
  std::error_code ec;
  if (!fs::is_directory(src_root, ec)) throw IoError("source " + src_root.string() + " is not a directory");
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(src_root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  if (classes.empty()) throw ConfigError("no class directories under " + src_root.string());
  std::sort(classes.begin(), classes.end());

  Manifest manifest;
  for (const auto& cls : classes) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(src_root / cls)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw ConfigError("class directory " + (src_root / cls).string() + " is empty");
    std::sort(files.begin(), files.end());
    const fs::path out_dir = dst_root / cls;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    for (const auto& file : files) {
      const std::string rel_src = cls + "/" + file.filename().string();
      ++manifest.source_images;
      Image img;
      try {
        img = load_image(file);
      } catch (const IoError& e) {
        manifest.skipped.push_back(rel_src + ": " + e.what());
        continue;
      }
      const std::string stem = file.stem().string();
      const std::string orig = stem + "_orig.ppm";
      write_image(out_dir / orig, resize_bilinear(img, spec.output_width, spec.output_height));
      manifest.entries.push_back({cls + "/" + orig, rel_src, cls, ""});
      const std::uint64_t file_key = hash_string(rel_src);
      for (int k = 0; k < spec.copies_per_image; ++k) {
        const std::uint64_t sample_seed = mix_keys(file_key, static_cast<std::uint64_t>(k));
        const std::string name = stem + "_aug" + std::to_string(k) + ".ppm";
        write_image(out_dir / name, augment_one(img, spec, sample_seed));
        manifest.entries.push_back({cls + "/" + name, rel_src, cls, std::to_string(sample_seed)});
      }
    }
  }
  const std::string csv = manifest.to_csv();
  write_file(dst_root / kManifestFile,
             std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  return manifest;
}

}  // namespace rockres
