#include "rockres/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "rockres/errors.hpp"

namespace rockres {

Image::Image(std::int64_t w, std::int64_t h, std::uint8_t fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw ShapeError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w * h * 3), fill);
}

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::int64_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::int64_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (std::int64_t{1} << 31)) throw DecodeError(std::string("ppm: ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw DecodeError(std::string("ppm: expected ") + field, pos_);
    if (pos_ < bytes_.size() && !is_space(bytes_[pos_]) && bytes_[pos_] != '#') {
      throw DecodeError(std::string("ppm: malformed ") + field, pos_);
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw DecodeError("ppm: missing P6 magic", 0);
  }
  HeaderReader r(bytes.subspan(0));
  r.advance();
  r.advance();
  if (r.pos() >= bytes.size() || !is_space(bytes[r.pos()])) {
    throw DecodeError("ppm: expected whitespace after magic", r.pos());
  }
  const std::int64_t width = r.number("width");
  const std::int64_t height = r.number("height");
  const std::size_t maxval_at = r.pos();
  const std::int64_t maxval = r.number("maxval");
  if (width < 1 || height < 1) throw DecodeError("ppm: zero image dimension", maxval_at);
  if (maxval != 255) {
    throw DecodeError("ppm: unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
  }
  if (r.pos() >= bytes.size() || !is_space(bytes[r.pos()])) {
    throw DecodeError("ppm: expected single whitespace before payload", r.pos());
  }
  const std::size_t payload = r.pos() + 1;
  const auto need = static_cast<std::size_t>(width * height * 3);
  if (bytes.size() - payload < need) {
    throw DecodeError("ppm: truncated payload, expected " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - payload),
                      bytes.size());
  }
  Image img(width, height);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(payload), need, img.pixels.begin());
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_ppm(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_image(const std::filesystem::path& path, const Image& img) {
  write_file(path, encode_ppm(img));
}

Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height) {
  if (width == img.width && height == img.height) return img;
  Image out(width, height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  for (std::int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(fy));
    const std::int64_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(fx));
      const std::int64_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        const double v = top * (1 - wy) + bot * wy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace rockres
