#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rockres {

/// 8-bit RGB image, row-major, channels interleaved.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::int64_t w, std::int64_t h, std::uint8_t fill = 0);

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PPM (P6, maxval 255). Header comments are accepted; anything else
/// malformed raises DecodeError carrying the byte offset.
Image decode_ppm(std::span<const std::uint8_t> bytes);
/// Canonical form: "P6\n<w> <h>\n255\n" followed by the raw bytes.
std::vector<std::uint8_t> encode_ppm(const Image& img);

Image load_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

/// Bilinear resampling with half-pixel centers and clamped borders. Equal
/// sizes return the input unchanged.
Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace rockres
