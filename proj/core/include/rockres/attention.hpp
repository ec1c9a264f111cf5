#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rockres/layers.hpp"

namespace rockres {

struct MHSAConfig {
  std::int64_t channels = 0;
  int heads = 4;
  /// Spatial size the relative position tables are bound to.
  std::int64_t height = 0;
  std::int64_t width = 0;

  /// Throws ConfigError unless channels divide evenly into heads.
  void validate() const;
  std::int64_t head_dim() const { return channels / heads; }
  std::int64_t sequence_length() const { return height * width; }
};

/// Multi-head self-attention over an N x C x H x W feature map.
///
/// Queries, keys and values are 1x1 projections (C x C, no bias). Each head
/// scores query i against key j as (q_i . k_j + q_i . r_j) / sqrt(d), where
/// r_j = rel_height[row(j)] + rel_width[col(j)] is a factorized position
/// embedding shared by all heads. The concatenated head outputs go through a
/// zero-initialized output projection, so a fresh layer maps everything to 0.
template <typename T>
struct MHSALayer {
  MHSAConfig config;
  std::string name;
  Tensor<T> query;       // C x C x 1 x 1
  Tensor<T> key;         // C x C x 1 x 1
  Tensor<T> value;       // C x C x 1 x 1
  Tensor<T> output;      // C x C x 1 x 1, zero at init
  Tensor<T> rel_height;  // H x d
  Tensor<T> rel_width;   // W x d

  static MHSALayer make(const InitContext& ctx, std::string name, const MHSAConfig& config);

  void collect_parameters(std::vector<NamedTensor<T>>& out) const;
  std::int64_t param_count() const;
  std::string describe() const;
};

template <typename T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const MHSALayer<T>& layer);

/// Post-softmax attention used by mhsa_forward, shaped N x heads x L x L with
/// rows indexed by query position.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const MHSALayer<T>& layer);

/// Parameter count of an MHSA layer with this configuration.
std::int64_t mhsa_param_count(const MHSAConfig& config);

}  // namespace rockres
