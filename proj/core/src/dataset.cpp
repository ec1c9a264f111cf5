#include "rockres/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rockres/rng.hpp"

namespace fs = std::filesystem;

namespace rockres {

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm";
}

DatasetIndex scan_dataset(const fs::path& root, Split split) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root " + root.string() + " is not a directory");
  DatasetIndex index;
  index.split = split;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) index.class_names.push_back(entry.path().filename().string());
  }
  if (index.class_names.empty()) throw ConfigError("no class directories under " + root.string());
  std::sort(index.class_names.begin(), index.class_names.end());
  for (std::size_t label = 0; label < index.class_names.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / index.class_names[label])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) {
      throw ConfigError("class '" + index.class_names[label] + "' under " + root.string() +
                        " has no images");
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    for (auto& f : files) index.samples.push_back({std::move(f), static_cast<std::int32_t>(label)});
  }
  return index;
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds{scan_dataset(root / "train", Split::train), scan_dataset(root / "test", Split::test)};
  if (ds.train.class_names != ds.test.class_names) {
    throw ConfigError("train and test splits under " + root.string() + " list different classes");
  }
  return ds;
}

ChannelStats compute_channel_stats(const DatasetIndex& index, std::int64_t height,
                                   std::int64_t width) {
  std::array<double, 3> s{}, sq{};
  double count = 0.0;
  for (const auto& sample : index.samples) {
    const Image img = resize_bilinear(load_image(sample.path), width, height);
    for (std::size_t p = 0; p < img.pixels.size(); p += 3) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.pixels[p + static_cast<std::size_t>(c)] / 255.0;
        s[static_cast<std::size_t>(c)] += v;
        sq[static_cast<std::size_t>(c)] += v * v;
      }
    }
    count += static_cast<double>(img.width * img.height);
  }
  ChannelStats stats;
  if (count == 0.0) return stats;
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = s[c] / count;
    const double var = std::max(sq[c] / count - m * m, 0.0);
    stats.mean[c] = static_cast<float>(m);
    stats.stddev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
  }
  return stats;
}

void image_to_chw(const Image& img, const ChannelStats& stats, float* out) {
  const std::int64_t plane = img.width * img.height;
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = img.pixels[static_cast<std::size_t>(i * 3 + c)] / 255.0f;
      out[c * plane + i] = (v - stats.mean[static_cast<std::size_t>(c)]) /
                           stats.stddev[static_cast<std::size_t>(c)];
    }
  }
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch,
                                                 bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    CounterRng rng(seed, mix_keys(0x5348554646ULL, epoch));
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

BatchSequence::BatchSequence(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed,
                             std::uint64_t epoch, ChannelStats stats, std::int64_t height,
                             std::int64_t width)
    : index_(&index),
      plan_(batch_plan(index.size(), batch_size, seed, epoch, index.split == Split::train)),
      stats_(stats),
      height_(height),
      width_(width) {}

Batch BatchSequence::load(std::size_t i) const {
  const auto& ids = plan_.at(i);
  const auto n = static_cast<std::int64_t>(ids.size());
  NDArray<float> images(Shape{n, 3, height_, width_});
  Batch batch;
  batch.labels.reserve(ids.size());
  for (std::int64_t b = 0; b < n; ++b) {
    const Sample& s = index_->samples[ids[static_cast<std::size_t>(b)]];
    const Image img = resize_bilinear(load_image(s.path), width_, height_);
    image_to_chw(img, stats_, images.ptr() + b * 3 * height_ * width_);
    batch.labels.push_back(s.label);
  }
  batch.images = Tensor<float>(std::move(images));
  return batch;
}

BatchSequence batches(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed,
                      std::uint64_t epoch, const ChannelStats& stats, std::int64_t height,
                      std::int64_t width) {
  return BatchSequence(index, batch_size, seed, epoch, stats, height, width);
}

namespace {

std::string padded(int value, int digits) {
  std::string s = std::to_string(value);
  return std::string(static_cast<std::size_t>(std::max(0, digits - static_cast<int>(s.size()))), '0') + s;
}

int digits_for(int count) {
  int d = 1;
  for (int v = std::max(count - 1, 1); v >= 10; v /= 10) ++d;
  return std::max(d, 2);
}

// Texture intensity in [0, 1] for family `family` at pixel (x, y).
double texture(int family, double freq, double angle, double phase, double u, double v,
               const std::vector<std::array<double, 3>>& blobs) {
  switch (family) {
    case 0: {  // oriented stripes
      const double t = u * std::cos(angle) + v * std::sin(angle);
      return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * t + phase);
    }
    case 1: {  // soft blobs
      double acc = 0.0;
      for (const auto& b : blobs) {
        const double dx = u - b[0], dy = v - b[1];
        acc += std::exp(-(dx * dx + dy * dy) / (2.0 * b[2] * b[2]));
      }
      return std::min(acc, 1.0);
    }
    default: {  // checkerboard
      const auto cx = static_cast<long>(std::floor(u * freq * 2.0 + phase));
      const auto cy = static_cast<long>(std::floor(v * freq * 2.0 + phase));
      return ((cx + cy) & 1) ? 1.0 : 0.0;
    }
  }
}

}  // namespace

void make_synthetic(const fs::path& root, int classes, int per_class, std::int64_t height,
                    std::int64_t width, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (per_class < 1) throw ConfigError("synthetic dataset needs at least 1 image per class");
  if (height < 1 || width < 1) throw ConfigError("synthetic image size must be positive");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  const int cdigits = digits_for(classes), idigits = digits_for(per_class);
  for (int c = 0; c < classes; ++c) {
    const fs::path dir = root / ("class_" + padded(c, cdigits));
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const int family = c % 3;
    const double freq = 2.0 + 1.5 * (c / 3);
    const double tint_hue = 2.0 * std::numbers::pi * c / classes;
    const std::array<double, 3> tint{0.5 + 0.4 * std::cos(tint_hue),
                                     0.5 + 0.4 * std::cos(tint_hue - 2.0944),
                                     0.5 + 0.4 * std::cos(tint_hue + 2.0944)};
    for (int i = 0; i < per_class; ++i) {
      CounterRng rng(seed, mix_keys(static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      std::vector<std::array<double, 3>> blobs;
      const int nblobs = 2 + static_cast<int>(rng.below(3)) + c / 3;
      for (int b = 0; b < nblobs; ++b) {
        blobs.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.06, 0.14)});
      }
      Image img(width, height);
      for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
          const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
          const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
          const double t = texture(family, freq, angle, phase, u, v, blobs);
          for (int ch = 0; ch < 3; ++ch) {
            const double noise = rng.uniform(-0.06, 0.06);
            const double val = 0.15 + 0.7 * t * tint[static_cast<std::size_t>(ch)] + noise;
            img.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(val * 255.0 + 0.5), 0.0, 255.0));
          }
        }
      }
      write_image(dir / ("img_" + padded(i, idigits) + ".ppm"), img);
    }
  }
}

void make_synthetic_splits(const fs::path& root, int classes, int train_per_class,
                           int test_per_class, std::int64_t height, std::int64_t width,
                           std::uint64_t seed) {
  make_synthetic(root / "train", classes, train_per_class, height, width, mix_keys(seed, 1));
  make_synthetic(root / "test", classes, test_per_class, height, width, mix_keys(seed, 2));
}

}  // namespace rockres
