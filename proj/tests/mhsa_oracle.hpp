#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "rockres/attention.hpp"
#include "rockres/rng.hpp"

namespace rockres::testing {

inline void fill_random(Tensor<double>& t, std::uint64_t seed) {
  CounterRng rng(seed, 5);
  for (auto& v : t.mutable_value().data()) v = rng.uniform(-1.0, 1.0);
}

/// Loop-level multi-head attention with factorized relative positions.
/// Returns {output N x C x H x W, attention N x heads x L x L}.
inline std::pair<NDArray<double>, NDArray<double>> naive_mhsa(const NDArray<double>& x, const MHSALayer<double>& l) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), len = h * w;
  const std::int64_t heads = l.config.heads, d = c / heads;
  auto project = [&](const NDArray<double>& wt, std::int64_t b, std::int64_t ch, std::int64_t p) {
    double s = 0;
    for (std::int64_t k = 0; k < c; ++k) s += wt[ch * c + k] * x[((b * c + k) * h) * w + p];
    return s;
  };
  NDArray<double> out({n, c, h, w});
  NDArray<double> attn({n, heads, len, len});
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> concat(static_cast<std::size_t>(c * len), 0.0);
    for (std::int64_t hd = 0; hd < heads; ++hd) {
      for (std::int64_t i = 0; i < len; ++i) {
        std::vector<double> logit(static_cast<std::size_t>(len));
        for (std::int64_t j = 0; j < len; ++j) {
          double qk = 0, qr = 0;
          for (std::int64_t e = 0; e < d; ++e) {
            const auto ch = hd * d + e;
            const double q = project(l.query.value(), b, ch, i);
            const double k = project(l.key.value(), b, ch, j);
            const double r = l.rel_height.value()[(j / w) * d + e] + l.rel_width.value()[(j % w) * d + e];
            qk += q * k;
            qr += q * r;
          }
          logit[static_cast<std::size_t>(j)] = (qk + qr) / std::sqrt(static_cast<double>(d));
        }
        double mx = -1e300, z = 0;
        for (double v : logit) mx = std::max(mx, v);
        for (double& v : logit) z += (v = std::exp(v - mx));
        for (std::int64_t j = 0; j < len; ++j) {
          const double a = logit[static_cast<std::size_t>(j)] / z;
          attn[((b * heads + hd) * len + i) * len + j] = a;
          for (std::int64_t e = 0; e < d; ++e) {
            const auto ch = hd * d + e;
            concat[static_cast<std::size_t>(ch * len + i)] += a * project(l.value.value(), b, ch, j);
          }
        }
      }
    }
    for (std::int64_t o = 0; o < c; ++o)
      for (std::int64_t p = 0; p < len; ++p) {
        double s = 0;
        for (std::int64_t k = 0; k < c; ++k) s += l.output.value()[o * c + k] * concat[static_cast<std::size_t>(k * len + p)];
        out[(b * c + o) * len + p] = s;
      }
  }
  return {out, attn};
}

inline MHSALayer<double> random_layer(std::int64_t c, int heads, std::int64_t h, std::int64_t w) {
  auto l = MHSALayer<double>::make(InitContext{3}, "mhsa", MHSAConfig{c, heads, h, w});
  fill_random(l.output, 1);  // zero at init; randomized so the oracle sees the projection
  fill_random(l.rel_height, 2);
  fill_random(l.rel_width, 3);
  return l;
}

}  // namespace rockres::testing
