#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rockres/autograd.hpp"
#include "rockres/image.hpp"

namespace rockres {

enum class Split { train, test };

const char* to_string(Split split);
Split parse_split(const std::string& s);

struct Sample {
  std::filesystem::path path;
  std::int32_t label = 0;
};

/// Class-per-directory listing. Labels are dense and follow the sorted class
/// names; samples are sorted by (label, file name).
struct DatasetIndex {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  Split split = Split::train;

  std::int32_t num_classes() const { return static_cast<std::int32_t>(class_names.size()); }
  std::size_t size() const { return samples.size(); }
  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

/// Files with a .ppm extension count as images.
bool is_image_file(const std::filesystem::path& path);

/// One class per immediate subdirectory of `root`.
DatasetIndex scan_dataset(const std::filesystem::path& root, Split split = Split::train);

/// root/train and root/test, which must list the same classes.
struct Dataset {
  DatasetIndex train;
  DatasetIndex test;
};
Dataset load_dataset(const std::filesystem::path& root);

/// Per-channel standardization constants over pixels scaled to [0, 1].
struct ChannelStats {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Computed over every image of the index after resizing to the model input.
ChannelStats compute_channel_stats(const DatasetIndex& index, std::int64_t height,
                                   std::int64_t width);

struct Batch {
  Tensor<float> images;  // N x 3 x H x W, standardized
  std::vector<std::int32_t> labels;
};

/// Scales to [0, 1], standardizes per channel, writes into `out` (3 x H x W).
void image_to_chw(const Image& img, const ChannelStats& stats, float* out);

/// Sample order for one epoch: shuffled by (seed, epoch) for the train split,
/// index order for the test split; the final partial batch is kept.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch,
                                                 bool shuffle);

/// Lazily decoded batches of one epoch.
class BatchSequence {
 public:
  BatchSequence(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed,
                std::uint64_t epoch, ChannelStats stats, std::int64_t height, std::int64_t width);

  std::size_t size() const noexcept { return plan_.size(); }
  const std::vector<std::size_t>& indices(std::size_t i) const { return plan_.at(i); }
  Batch load(std::size_t i) const;

 private:
  const DatasetIndex* index_;
  std::vector<std::vector<std::size_t>> plan_;
  ChannelStats stats_;
  std::int64_t height_;
  std::int64_t width_;
};

BatchSequence batches(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed,
                      std::uint64_t epoch, const ChannelStats& stats, std::int64_t height,
                      std::int64_t width);

/// Procedural class-per-directory corpus: each class is a texture family
/// (stripes, blobs, checkerboard) with a class-specific frequency and tint.
void make_synthetic(const std::filesystem::path& root, int classes, int per_class,
                    std::int64_t height, std::int64_t width, std::uint64_t seed);

/// root/train and root/test via make_synthetic with distinct streams.
void make_synthetic_splits(const std::filesystem::path& root, int classes, int train_per_class,
                           int test_per_class, std::int64_t height, std::int64_t width,
                           std::uint64_t seed);

}  // namespace rockres
