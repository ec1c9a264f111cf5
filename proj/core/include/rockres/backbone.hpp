#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rockres/blocks.hpp"

namespace rockres {

/// Blocks per stage and the stage widths at base_width 64.
inline constexpr std::array<int, 4> kStageBlocks{3, 4, 6, 3};
inline constexpr std::array<int, 4> kStageWidthMultipliers{1, 2, 4, 8};

struct ModelConfig {
  std::int64_t num_classes = 53;
  std::int64_t input_height = 224;
  std::int64_t input_width = 224;
  int bot_blocks = 0;  // trailing stage-4 blocks replaced by attention blocks
  bool irc = false;    // internal residual connection in those blocks
  int kernel_mod = 0;  // ladder level applied to every convolutional block
  std::uint64_t seed = 0;
  /// Stage-1 width; stages use 1x, 2x, 4x, 8x. 64 is the standard network.
  std::int64_t base_width = 64;
  int heads = 4;

  void validate() const;
  /// Spatial size of every feature map in the final stage.
  std::pair<std::int64_t, std::int64_t> final_stage_spatial() const;
  /// Variant of block `index` in stage `stage` (both zero-based).
  BlockVariant block_variant(int stage, int index) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// ResNet-34 layout: stem (7x7/2 conv, norm, ReLU, 3x3/2 max-pool), four
/// residual stages, global average pool, linear classifier.
template <typename T>
class Network {
 public:
  explicit Network(const ModelConfig& config);

  /// images: N x 3 x H x W at the configured input size. Returns logits.
  Tensor<T> forward(const Tensor<T>& images, Mode mode);

  const ModelConfig& config() const noexcept { return config_; }
  /// One operation per line, stable across versions.
  std::string descriptor() const;
  std::vector<std::string> descriptor_lines() const;

  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();
  std::int64_t param_count() const;

  std::vector<std::vector<ResidualBlock<T>>>& stages() noexcept { return stages_; }
  ResidualBlock<T>& block(int stage, int index) { return stages_.at(stage).at(index); }
  void zero_grad();

 private:
  ModelConfig config_;
  ConvLayer<T> stem_conv_;
  NormLayer<T> stem_norm_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  LinearLayer<T> fc_;
};

template <typename T>
Network<T> build_model(const ModelConfig& config) {
  return Network<T>(config);
}

template <typename T>
std::int64_t param_count(const Network<T>& net) {
  return net.param_count();
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace rockres
