#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "rockres/dataset.hpp"
#include "rockres/errors.hpp"
#include "test_util.hpp"

namespace rockres {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::vector<std::uint8_t> bytes(const std::string& header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Image solid(std::int64_t w, std::int64_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (std::size_t p = 0; p < img.pixels.size(); p += 3) {
    img.pixels[p] = r;
    img.pixels[p + 1] = g;
    img.pixels[p + 2] = b;
  }
  return img;
}

TEST(Ppm, DecodesHandWrittenFixture) {
  const auto img = decode_ppm(bytes("P6\n2 2\n255\n", {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30}));
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30}));
  EXPECT_EQ(img.at(1, 1, 2), 30);
}

TEST(Ppm, AcceptsHeaderComments) {
  const auto img = decode_ppm(bytes("P6 # made by hand\n# another\n3 1 # dims\n255\n", {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Ppm, PayloadMayStartWithWhitespaceBytes) {
  // 0x0a and 0x20 are pixel data here, not separators.
  const auto img = decode_ppm(bytes("P6\n1 1\n255\n", {10, 32, 9}));
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{10, 32, 9}));
}

TEST(Ppm, RejectsMalformedInputWithOffset) {
  try {
    decode_ppm(bytes("P3\n1 1\n255\n", {0, 0, 0}));
    FAIL() << "P3 accepted";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(decode_ppm(bytes("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})), DecodeError);
  EXPECT_THROW(decode_ppm(bytes("P6\n2 2\n255\n", {0, 0, 0})), DecodeError);
  EXPECT_THROW(decode_ppm(bytes("P6\n0 2\n255\n", {})), DecodeError);
  EXPECT_THROW(decode_ppm(bytes("P6\nx 2\n255\n", {})), DecodeError);
}

TEST(Ppm, EncodeIsCanonicalAndRoundTrips) {
  Image img(2, 1);
  img.pixels = {1, 2, 3, 250, 251, 252};
  EXPECT_EQ(encode_ppm(img), bytes("P6\n2 1\n255\n", {1, 2, 3, 250, 251, 252}));
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  // Commented input re-encodes canonically.
  const auto commented = bytes("P6\n#c\n2 1\n255\n", {1, 2, 3, 250, 251, 252});
  EXPECT_EQ(encode_ppm(decode_ppm(commented)), encode_ppm(img));
}

TEST(Ppm, FileErrors) {
  TempDir dir("ppm");
  EXPECT_THROW(load_image(dir / "missing.ppm"), IoError);
  Image img = solid(3, 2, 7, 8, 9);
  write_image(dir / "a.ppm", img);
  EXPECT_EQ(load_image(dir / "a.ppm"), img);
}

TEST(Resize, HalfPixelBilinear) {
  Image img(2, 1);
  img.pixels = {0, 0, 0, 100, 100, 100};
  const auto up = resize_bilinear(img, 4, 1);
  // Source x = (x + 0.5) / 2 - 0.5 clamped: 0, 0.25, 0.75, 1.
  EXPECT_EQ(up.pixels, (std::vector<std::uint8_t>{0, 0, 0, 25, 25, 25, 75, 75, 75, 100, 100, 100}));
  EXPECT_EQ(resize_bilinear(up, 4, 1), up);
  const auto down = resize_bilinear(up, 2, 1);
  // Source x = 2x + 0.5: halfway between neighbours.
  EXPECT_EQ(down.pixels, (std::vector<std::uint8_t>{13, 13, 13, 88, 88, 88}));
}

void make_tree(const fs::path& root, const std::map<std::string, int>& classes) {
  for (const auto& [name, count] : classes) {
    fs::create_directories(root / name);
    for (int i = 0; i < count; ++i) {
      write_image(root / name / ("img" + std::to_string(count - i) + ".ppm"),
                  solid(4, 4, static_cast<std::uint8_t>(i * 40), 0, 0));
    }
  }
}

TEST(Dataset, ScanSortsClassesAndFiles) {
  TempDir dir("scan");
  make_tree(dir.path(), {{"zircon", 2}, {"basalt", 3}});
  write_file(dir / "basalt" / "notes.txt", std::vector<std::uint8_t>{'x'});
  const auto index = scan_dataset(dir.path());
  EXPECT_EQ(index.class_names, (std::vector<std::string>{"basalt", "zircon"}));
  ASSERT_EQ(index.size(), 5u);
  EXPECT_EQ(index.samples[0].label, 0);
  EXPECT_EQ(index.samples[0].path.filename(), "img1.ppm");
  EXPECT_EQ(index.samples[2].path.filename(), "img3.ppm");
  EXPECT_EQ(index.samples[3].label, 1);
}

TEST(Dataset, ScanErrors) {
  TempDir dir("scan_err");
  EXPECT_THROW(scan_dataset(dir / "absent"), IoError);
  EXPECT_THROW(scan_dataset(dir.path()), ConfigError);  // no classes
  make_tree(dir.path(), {{"a", 1}});
  fs::create_directories(dir / "b");
  EXPECT_THROW(scan_dataset(dir.path()), ConfigError);  // empty class
}

TEST(Dataset, SplitsMustAgreeOnClasses) {
  TempDir dir("splits");
  make_tree(dir / "train", {{"a", 1}, {"b", 1}});
  make_tree(dir / "test", {{"a", 1}, {"c", 1}});
  EXPECT_THROW(load_dataset(dir.path()), ConfigError);
}

TEST(Dataset, ChannelStatsAndStandardization) {
  TempDir dir("stats");
  fs::create_directories(dir / "k");
  write_image(dir / "k" / "a.ppm", solid(2, 2, 0, 51, 255));
  write_image(dir / "k" / "b.ppm", solid(2, 2, 255, 51, 255));
  const auto stats = compute_channel_stats(scan_dataset(dir.path()), 2, 2);
  EXPECT_NEAR(stats.mean[0], 0.5, 1e-6);
  EXPECT_NEAR(stats.stddev[0], 0.5, 1e-6);
  EXPECT_NEAR(stats.mean[1], 0.2, 1e-6);
  EXPECT_NEAR(stats.stddev[2], 1e-3, 1e-9);  // constant channel: floor

  float chw[12];
  image_to_chw(solid(2, 2, 255, 102, 255), stats, chw);
  EXPECT_NEAR(chw[0], 1.0, 1e-6);                   // (1 - 0.5) / 0.5
  EXPECT_NEAR(chw[4], 200.0, 0.05);              // (0.4 - 0.2) / 1e-3
}

TEST(Dataset, BatchPlan) {
  const auto test_plan = batch_plan(10, 4, 1, 0, false);
  ASSERT_EQ(test_plan.size(), 3u);
  EXPECT_EQ(test_plan[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(test_plan[2], (std::vector<std::size_t>{8, 9}));  // partial batch kept

  const auto e0 = batch_plan(10, 4, 1, 0, true);
  const auto e1 = batch_plan(10, 4, 1, 1, true);
  EXPECT_EQ(e0, batch_plan(10, 4, 1, 0, true));
  EXPECT_NE(e0, e1);
  std::multiset<std::size_t> all;
  for (const auto& b : e0) all.insert(b.begin(), b.end());
  EXPECT_EQ(all, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Dataset, BatchesShuffleOnlyTrain) {
  TempDir dir("batches");
  make_synthetic_splits(dir.path(), 3, 4, 2, 16, 16, 3);
  const auto data = load_dataset(dir.path());
  const ChannelStats stats;
  const auto test_seq = batches(data.test, 4, 9, 2, stats, 16, 16);
  EXPECT_EQ(test_seq.indices(0), (std::vector<std::size_t>{0, 1, 2, 3}));
  const auto train_seq = batches(data.train, 5, 9, 2, stats, 16, 16);
  ASSERT_EQ(train_seq.size(), 3u);
  const auto batch = train_seq.load(2);
  EXPECT_EQ(batch.images.shape(), (Shape{2, 3, 16, 16}));
  ASSERT_EQ(batch.labels.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(batch.labels[i], data.train.samples[train_seq.indices(2)[i]].label);
  }
}

TEST(Dataset, SyntheticIsDeterministic) {
  TempDir a("syn_a"), b("syn_b");
  make_synthetic(a.path(), 3, 2, 8, 8, 5);
  make_synthetic(b.path(), 3, 2, 8, 8, 5);
  const auto ia = scan_dataset(a.path()), ib = scan_dataset(b.path());
  ASSERT_EQ(ia.size(), 6u);
  for (std::size_t i = 0; i < ia.size(); ++i) {
    EXPECT_EQ(testing::read_bytes(ia.samples[i].path), testing::read_bytes(ib.samples[i].path));
  }
}

TEST(Dataset, SplitNames) {
  EXPECT_EQ(parse_split("train"), Split::train);
  EXPECT_EQ(std::string(to_string(Split::test)), "test");
  EXPECT_THROW(parse_split("val"), ConfigError);
}

}  // namespace
}  // namespace rockres
