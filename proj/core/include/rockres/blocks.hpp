#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rockres/attention.hpp"
#include "rockres/layers.hpp"

namespace rockres {

enum class BlockKind { basic, modified_kernel, bot, bot_irc };

const char* to_string(BlockKind kind);

/// Kernel modification switches. Valid settings form a cumulative ladder:
/// each flag may only be set when every flag before it is set.
struct ModFlags {
  bool use_gelu = false;
  bool fewer_activations = false;
  bool use_layer_norm = false;
  bool leading_1x1 = false;

  /// Ladder level 0..4 to flags.
  static ModFlags ladder(int level);
  /// Inverse of ladder(); -1 when the flags skip a rung.
  int level() const;

  friend bool operator==(const ModFlags&, const ModFlags&) = default;
};

struct BlockVariant {
  BlockKind kind = BlockKind::basic;
  ModFlags flags;  // modified_kernel only
  std::int64_t channels_in = 64;
  std::int64_t channels_out = 64;
  int stride = 1;
  int heads = 4;  // attention variants only

  void validate() const;
  bool has_projection() const { return stride != 1 || channels_in != channels_out; }
};

/// Attention stage of a BoT block. With `internal_residual` the stage
/// computes u + MHSA(u) instead of MHSA(u).
template <typename T>
struct AttentionLayer {
  MHSALayer<T> mhsa;
  bool internal_residual = false;
};

template <typename T>
using BlockLayer = std::variant<ConvLayer<T>, NormLayer<T>, ActLayer, AttentionLayer<T>>;

/// Projection applied on the skip path when the block changes shape.
template <typename T>
struct SkipProjection {
  ConvLayer<T> conv;
  NormLayer<T> norm;
};

/// A residual unit: out = act(main(x) + skip(x)).
///
/// The main path is an ordered list of layers; the same list drives the
/// forward pass, the layer-sequence descriptor, and parameter enumeration.
template <typename T>
class ResidualBlock {
 public:
  /// `spatial` is the block's output height/width, required by attention
  /// variants to bind their position tables.
  static ResidualBlock build(const BlockVariant& variant, std::string name, const InitContext& ctx,
                             std::int64_t out_height = 0, std::int64_t out_width = 0);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  const BlockVariant& variant() const noexcept { return variant_; }
  const std::string& name() const noexcept { return name_; }
  std::vector<BlockLayer<T>>& main_path() noexcept { return main_; }
  const std::vector<BlockLayer<T>>& main_path() const noexcept { return main_; }
  std::optional<SkipProjection<T>>& skip() noexcept { return skip_; }
  const ActLayer& output_activation() const noexcept { return out_act_; }
  /// The attention stage, or nullptr for convolution-only blocks.
  AttentionLayer<T>* attention();

  std::vector<std::string> describe() const;
  void collect_parameters(std::vector<NamedTensor<T>>& out) const;
  void collect_buffers(std::vector<NamedBuffer<T>>& out);
  std::int64_t param_count() const;

 private:
  BlockVariant variant_;
  std::string name_;
  std::vector<BlockLayer<T>> main_;
  std::optional<SkipProjection<T>> skip_;
  ActLayer out_act_;
};

/// Closed-form parameter count for a block; attention variants also need the
/// bound spatial size.
std::int64_t block_param_count(const BlockVariant& variant, std::int64_t out_height = 0,
                               std::int64_t out_width = 0);

// Kind-checked entry points. Each throws ConfigError if the block was built
// for another kind.
template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode);
template <typename T>
Tensor<T> modified_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode);
template <typename T>
Tensor<T> bot_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode);
template <typename T>
Tensor<T> bot_irc_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode);

}  // namespace rockres
