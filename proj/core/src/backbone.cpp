#include "rockres/backbone.hpp"

#include <sstream>

namespace rockres {

namespace {

std::int64_t conv_out(std::int64_t size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (input_height < 8 || input_width < 8) throw ConfigError("model.input_size must be >= 8");
  if (bot_blocks < 0 || bot_blocks > 2) throw ConfigError("model.bot_blocks must be 0, 1 or 2");
  if (irc && bot_blocks == 0) throw ConfigError("model.irc requires model.bot_blocks >= 1");
  if (kernel_mod < 0 || kernel_mod > 4) throw ConfigError("model.kernel_mod must be 0..4");
  if (base_width < 1) throw ConfigError("model.base_width must be positive");
  if (bot_blocks > 0 && (base_width * kStageWidthMultipliers[3]) % heads != 0) {
    throw ConfigError("final stage width not divisible by attention heads");
  }
  if (kernel_mod >= 4 && base_width % 2 != 0) {
    throw ConfigError("model.base_width must be even with a leading 1x1 bottleneck");
  }
}

std::pair<std::int64_t, std::int64_t> ModelConfig::final_stage_spatial() const {
  auto reduce = [](std::int64_t s) {
    s = conv_out(s, 7, 2, 3);  // stem conv
    s = conv_out(s, 3, 2, 1);  // stem pool
    for (int stage = 1; stage < 4; ++stage) s = conv_out(s, 3, 2, 1);
    return s;
  };
  return {reduce(input_height), reduce(input_width)};
}

BlockVariant ModelConfig::block_variant(int stage, int index) const {
  BlockVariant v;
  v.heads = heads;
  v.channels_out = base_width * kStageWidthMultipliers[static_cast<std::size_t>(stage)];
  v.channels_in = (index == 0 && stage > 0)
                      ? base_width * kStageWidthMultipliers[static_cast<std::size_t>(stage - 1)]
                      : v.channels_out;
  v.stride = (index == 0 && stage > 0) ? 2 : 1;
  const int last = kStageBlocks[3];
  if (stage == 3 && index >= last - bot_blocks) {
    v.kind = irc ? BlockKind::bot_irc : BlockKind::bot;
  } else if (kernel_mod > 0) {
    v.kind = BlockKind::modified_kernel;
    v.flags = ModFlags::ladder(kernel_mod);
  }
  return v;
}

template <typename T>
Network<T>::Network(const ModelConfig& config) : config_(config) {
  config_.validate();
  const InitContext ctx{config_.seed};
  const std::int64_t w0 = config_.base_width;
  stem_conv_ = ConvLayer<T>::make(ctx, "stem.conv", 3, w0, 7, 2, 3);
  stem_norm_ = NormLayer<T>::make("stem.bn", NormKind::batch, w0);

  std::int64_t h = conv_out(conv_out(config_.input_height, 7, 2, 3), 3, 2, 1);
  std::int64_t w = conv_out(conv_out(config_.input_width, 7, 2, 3), 3, 2, 1);
  for (int s = 0; s < 4; ++s) {
    std::vector<ResidualBlock<T>> stage;
    for (int b = 0; b < kStageBlocks[static_cast<std::size_t>(s)]; ++b) {
      const BlockVariant v = config_.block_variant(s, b);
      if (v.stride == 2) {
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
      }
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      stage.push_back(ResidualBlock<T>::build(v, name, ctx, h, w));
    }
    stages_.push_back(std::move(stage));
  }
  fc_ = LinearLayer<T>::make(ctx, "fc", w0 * kStageWidthMultipliers[3], config_.num_classes);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& images, Mode mode) {
  const Shape expected{images.shape().empty() ? 0 : images.dim(0), 3, config_.input_height,
                       config_.input_width};
  if (images.shape().size() != 4 || images.shape() != expected) {
    throw ShapeError("network expects N x 3 x " + std::to_string(config_.input_height) + " x " +
                     std::to_string(config_.input_width) + " images, got " +
                     to_string(images.shape()));
  }
  auto h = relu(stem_norm_.forward(stem_conv_.forward(images), mode));
  h = pool2d(h, PoolKind::max, 3, 2, 1);
  for (auto& stage : stages_) {
    for (auto& block : stage) h = block.forward(h, mode);
  }
  h = global_avg_pool(h);
  h = reshape(h, Shape{h.dim(0), h.dim(1)});
  return fc_.forward(h);
}

template <typename T>
std::vector<std::string> Network<T>::descriptor_lines() const {
  std::vector<std::string> lines;
  lines.push_back(stem_conv_.describe());
  lines.push_back(stem_norm_.describe());
  lines.push_back("stem.act relu");
  lines.push_back("stem.pool max_pool k3 s2 p1");
  for (const auto& stage : stages_) {
    for (const auto& block : stage) {
      auto b = block.describe();
      lines.insert(lines.end(), b.begin(), b.end());
    }
  }
  lines.push_back("pool global_avg_pool");
  lines.push_back(fc_.describe());
  return lines;
}

template <typename T>
std::string Network<T>::descriptor() const {
  std::ostringstream os;
  for (const auto& line : descriptor_lines()) os << line << '\n';
  return os.str();
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({stem_conv_.name + ".weight", stem_conv_.weight});
  out.push_back({stem_norm_.name + ".weight", stem_norm_.gamma});
  out.push_back({stem_norm_.name + ".bias", stem_norm_.beta});
  for (const auto& stage : stages_) {
    for (const auto& block : stage) block.collect_parameters(out);
  }
  out.push_back({fc_.name + ".weight", fc_.weight});
  out.push_back({fc_.name + ".bias", fc_.bias});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Network<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  out.push_back({stem_norm_.name + ".running_mean", &stem_norm_.state.running_mean});
  out.push_back({stem_norm_.name + ".running_var", &stem_norm_.state.running_var});
  for (auto& stage : stages_) {
    for (auto& block : stage) block.collect_buffers(out);
  }
  return out;
}

template <typename T>
std::int64_t Network<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template class Network<float>;
template class Network<double>;

}  // namespace rockres
