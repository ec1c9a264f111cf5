#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "rockres/image.hpp"

/// Per-pixel reference implementations of the color stages.
namespace rockres::testing::color {

inline std::uint8_t round_clamp(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

inline Image ref_brightness(const Image& in, double f) {
  Image out = in;
  for (auto& p : out.pixels) p = round_clamp(p * f);
  return out;
}

inline Image ref_contrast(const Image& in, double f) {
  double m = 0;
  for (std::int64_t y = 0; y < in.height; ++y)
    for (std::int64_t x = 0; x < in.width; ++x)
      m += 0.299 * in.at(x, y, 0) + 0.587 * in.at(x, y, 1) + 0.114 * in.at(x, y, 2);
  m /= static_cast<double>(in.width * in.height);
  Image out = in;
  for (auto& p : out.pixels) p = round_clamp((p - m) * f + m);
  return out;
}

inline Image ref_saturation(const Image& in, double f) {
  Image out = in;
  for (std::int64_t y = 0; y < in.height; ++y)
    for (std::int64_t x = 0; x < in.width; ++x) {
      const double l = 0.299 * in.at(x, y, 0) + 0.587 * in.at(x, y, 1) + 0.114 * in.at(x, y, 2);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = round_clamp(l + (in.at(x, y, c) - l) * f);
    }
  return out;
}

// HSV round trip in the hexcone formulation with hue as a fraction of a turn.
inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  if (mx == mn) {
    h = s = 0;
    return;
  }
  s = (mx - mn) / mx;
  const double rc = (mx - r) / (mx - mn), gc = (mx - g) / (mx - mn), bc = (mx - b) / (mx - mn);
  h = r == mx ? bc - gc : g == mx ? 2.0 + rc - bc : 4.0 + gc - rc;
  h = std::fmod(h / 6.0 + 1.0, 1.0);
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const int i = static_cast<int>(h * 6.0);
  const double f = h * 6.0 - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline Image ref_hue(const Image& in, double degrees) {
  Image out = in;
  for (std::int64_t y = 0; y < in.height; ++y)
    for (std::int64_t x = 0; x < in.width; ++x) {
      double h, s, v, rgb[3];
      rgb_to_hsv(in.at(x, y, 0) / 255.0, in.at(x, y, 1) / 255.0, in.at(x, y, 2) / 255.0, h, s, v);
      h = std::fmod(h + degrees / 360.0 + 1.0, 1.0);
      hsv_to_rgb(h, s, v, rgb[0], rgb[1], rgb[2]);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = round_clamp(rgb[c] * 255.0);
    }
  return out;
}

}  // namespace rockres::testing::color
