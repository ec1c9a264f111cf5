#include "rockres/blocks.hpp"

namespace rockres {

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::basic: return "Basic";
    case BlockKind::modified_kernel: return "ModifiedKernel";
    case BlockKind::bot: return "BoT";
    case BlockKind::bot_irc: return "BoT_IRC";
  }
  return "?";
}

ModFlags ModFlags::ladder(int level) {
  if (level < 0 || level > 4) {
    throw ConfigError("kernel modification level must be 0..4, got " + std::to_string(level));
  }
  ModFlags f;
  f.use_gelu = level >= 1;
  f.fewer_activations = level >= 2;
  f.use_layer_norm = level >= 3;
  f.leading_1x1 = level >= 4;
  return f;
}

int ModFlags::level() const {
  const bool rungs[] = {use_gelu, fewer_activations, use_layer_norm, leading_1x1};
  int level = 0;
  while (level < 4 && rungs[level]) ++level;
  for (int i = level; i < 4; ++i) {
    if (rungs[i]) return -1;
  }
  return level;
}

void BlockVariant::validate() const {
  if (channels_in < 1 || channels_out < 1) throw ConfigError("block channels must be positive");
  if (stride != 1 && stride != 2) throw ConfigError("block stride must be 1 or 2");
  if (kind == BlockKind::modified_kernel) {
    if (flags.level() < 0) throw ConfigError("kernel modification flags must form a cumulative ladder");
    if (flags.leading_1x1 && channels_out % 2 != 0) {
      throw ConfigError("leading 1x1 bottleneck needs an even output width");
    }
  } else if (flags != ModFlags{}) {
    throw ConfigError(std::string("modification flags are only valid for ModifiedKernel, not ") +
                      to_string(kind));
  }
  if (kind == BlockKind::bot || kind == BlockKind::bot_irc) {
    if (stride != 1) throw ConfigError("BoT blocks require stride 1");
    if (channels_in != channels_out) throw ConfigError("BoT blocks require equal in/out channels");
    if (heads < 1 || channels_out % heads != 0) {
      throw ConfigError("BoT channels must be divisible by the head count");
    }
  }
}

namespace {

std::string norm_name(NormKind kind, const std::string& suffix) {
  return (kind == NormKind::batch ? "bn" : "ln") + suffix;
}

}  // namespace

template <typename T>
ResidualBlock<T> ResidualBlock<T>::build(const BlockVariant& variant, std::string name,
                                         const InitContext& ctx, std::int64_t out_height,
                                         std::int64_t out_width) {
  variant.validate();
  ResidualBlock block;
  block.variant_ = variant;
  block.name_ = name;
  const std::string p = name + ".";
  const std::int64_t cin = variant.channels_in, cout = variant.channels_out;
  const int s = variant.stride;

  auto conv = [&](const std::string& n, std::int64_t ci, std::int64_t co, int k, int stride) {
    return ConvLayer<T>::make(ctx, p + n, ci, co, k, stride, k / 2);
  };
  auto norm = [&](NormKind kind, const std::string& suffix, std::int64_t c) {
    return NormLayer<T>::make(p + norm_name(kind, suffix), kind, c);
  };
  auto act = [&](ActKind kind, const std::string& n) { return ActLayer{p + n, kind}; };

  auto& m = block.main_;
  NormKind nk = NormKind::batch;
  ActKind ak = ActKind::relu;

  switch (variant.kind) {
    case BlockKind::basic:
    case BlockKind::modified_kernel: {
      const ModFlags f = variant.flags;
      nk = f.use_layer_norm ? NormKind::layer : NormKind::batch;
      ak = f.use_gelu ? ActKind::gelu : ActKind::relu;
      if (f.leading_1x1) {
        const std::int64_t mid = cout / 2;
        m.emplace_back(conv("conv0", cin, mid, 1, 1));
        m.emplace_back(norm(nk, "0", mid));
        m.emplace_back(act(ak, "act0"));
        m.emplace_back(conv("conv1", mid, mid, 3, s));
        m.emplace_back(norm(nk, "1", mid));
        m.emplace_back(act(ak, "act1"));
        m.emplace_back(conv("conv2", mid, cout, 3, 1));
        m.emplace_back(norm(nk, "2", cout));
      } else if (f.fewer_activations) {
        m.emplace_back(conv("conv1", cin, cout, 3, s));
        m.emplace_back(conv("conv2", cout, cout, 3, 1));
        m.emplace_back(norm(nk, "2", cout));
      } else {
        m.emplace_back(conv("conv1", cin, cout, 3, s));
        m.emplace_back(norm(nk, "1", cout));
        m.emplace_back(act(ak, "act1"));
        m.emplace_back(conv("conv2", cout, cout, 3, 1));
        m.emplace_back(norm(nk, "2", cout));
      }
      break;
    }
    case BlockKind::bot:
    case BlockKind::bot_irc: {
      if (out_height < 1 || out_width < 1) {
        throw ConfigError("attention block " + name + " needs its spatial size");
      }
      MHSAConfig mc{cout, variant.heads, out_height, out_width};
      m.emplace_back(conv("conv1", cin, cout, 3, 1));
      m.emplace_back(norm(nk, "1", cout));
      m.emplace_back(act(ak, "act1"));
      m.emplace_back(AttentionLayer<T>{MHSALayer<T>::make(ctx, p + "mhsa", mc),
                                       variant.kind == BlockKind::bot_irc});
      m.emplace_back(norm(nk, "2", cout));
      m.emplace_back(act(ak, "act2"));
      m.emplace_back(conv("conv2", cout, cout, 3, 1));
      m.emplace_back(norm(nk, "3", cout));
      break;
    }
  }

  if (variant.has_projection()) {
    block.skip_ = SkipProjection<T>{
        ConvLayer<T>::make(ctx, p + "downsample.conv", cin, cout, 1, s, 0),
        NormLayer<T>::make(p + "downsample." + norm_name(nk, ""), nk, cout)};
  }
  block.out_act_ = ActLayer{p + "act_out", ak};
  return block;
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& layer : main_) {
    std::visit(
        [&](auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            h = l.forward(h);
          } else if constexpr (std::is_same_v<L, NormLayer<T>>) {
            h = l.forward(h, mode);
          } else if constexpr (std::is_same_v<L, ActLayer>) {
            h = l.forward(h);
          } else {
            auto a = mhsa_forward(h, l.mhsa);
            h = l.internal_residual ? add(h, a) : a;
          }
        },
        layer);
  }
  Tensor<T> shortcut = x;
  if (skip_) shortcut = skip_->norm.forward(skip_->conv.forward(x), mode);
  if (h.shape() != shortcut.shape()) {
    throw ShapeError("block " + name_ + ": residual sum of " + rockres::to_string(h.shape()) +
                     " and " + rockres::to_string(shortcut.shape()));
  }
  return out_act_.forward(add(h, shortcut));
}

template <typename T>
AttentionLayer<T>* ResidualBlock<T>::attention() {
  for (auto& layer : main_) {
    if (auto* a = std::get_if<AttentionLayer<T>>(&layer)) return a;
  }
  return nullptr;
}

template <typename T>
std::vector<std::string> ResidualBlock<T>::describe() const {
  std::vector<std::string> lines;
  for (const auto& layer : main_) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, AttentionLayer<T>>) {
            lines.push_back(l.mhsa.describe());
            if (l.internal_residual) lines.push_back(l.mhsa.name + "_skip residual");
          } else {
            lines.push_back(l.describe());
          }
        },
        layer);
  }
  if (skip_) {
    lines.push_back(skip_->conv.describe());
    lines.push_back(skip_->norm.describe());
  }
  lines.push_back(name_ + ".add residual");
  lines.push_back(out_act_.describe());
  return lines;
}

template <typename T>
void ResidualBlock<T>::collect_parameters(std::vector<NamedTensor<T>>& out) const {
  auto norm_params = [&](const NormLayer<T>& n) {
    out.push_back({n.name + ".weight", n.gamma});
    out.push_back({n.name + ".bias", n.beta});
  };
  for (const auto& layer : main_) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            out.push_back({l.name + ".weight", l.weight});
          } else if constexpr (std::is_same_v<L, NormLayer<T>>) {
            norm_params(l);
          } else if constexpr (std::is_same_v<L, AttentionLayer<T>>) {
            l.mhsa.collect_parameters(out);
          }
        },
        layer);
  }
  if (skip_) {
    out.push_back({skip_->conv.name + ".weight", skip_->conv.weight});
    norm_params(skip_->norm);
  }
}

template <typename T>
void ResidualBlock<T>::collect_buffers(std::vector<NamedBuffer<T>>& out) {
  auto add_norm = [&](NormLayer<T>& n) {
    if (n.kind != NormKind::batch) return;
    out.push_back({n.name + ".running_mean", &n.state.running_mean});
    out.push_back({n.name + ".running_var", &n.state.running_var});
  };
  for (auto& layer : main_) {
    if (auto* n = std::get_if<NormLayer<T>>(&layer)) add_norm(*n);
  }
  if (skip_) add_norm(skip_->norm);
}

template <typename T>
std::int64_t ResidualBlock<T>::param_count() const {
  std::vector<NamedTensor<T>> params;
  collect_parameters(params);
  std::int64_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

std::int64_t block_param_count(const BlockVariant& v, std::int64_t out_height,
                               std::int64_t out_width) {
  v.validate();
  const std::int64_t cin = v.channels_in, cout = v.channels_out;
  std::int64_t total = 0;
  switch (v.kind) {
    case BlockKind::basic:
    case BlockKind::modified_kernel:
      if (v.flags.leading_1x1) {
        const std::int64_t mid = cout / 2;
        total = cin * mid + 9 * mid * mid + 9 * mid * cout + 2 * mid + 2 * mid + 2 * cout;
      } else if (v.flags.fewer_activations) {
        total = 9 * cin * cout + 9 * cout * cout + 2 * cout;
      } else {
        total = 9 * cin * cout + 9 * cout * cout + 4 * cout;
      }
      break;
    case BlockKind::bot:
    case BlockKind::bot_irc:
      total = 18 * cout * cout + 6 * cout +
              mhsa_param_count(MHSAConfig{cout, v.heads, out_height, out_width});
      break;
  }
  if (v.has_projection()) total += cin * cout + 2 * cout;
  return total;
}

namespace {

template <typename T>
Tensor<T> checked_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode,
                          BlockKind expected) {
  if (block.variant().kind != expected) {
    throw ConfigError(std::string("block ") + block.name() + " is " +
                      to_string(block.variant().kind) + ", not " + to_string(expected));
  }
  return block.forward(x, mode);
}

}  // namespace

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode) {
  return checked_forward(x, block, mode, BlockKind::basic);
}
template <typename T>
Tensor<T> modified_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode) {
  return checked_forward(x, block, mode, BlockKind::modified_kernel);
}
template <typename T>
Tensor<T> bot_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode) {
  return checked_forward(x, block, mode, BlockKind::bot);
}
template <typename T>
Tensor<T> bot_irc_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode) {
  return checked_forward(x, block, mode, BlockKind::bot_irc);
}

#define ROCKRES_INSTANTIATE_BLOCKS(T)                                                        \
  template class ResidualBlock<T>;                                                           \
  template Tensor<T> basic_block_forward(const Tensor<T>&, ResidualBlock<T>&, Mode);         \
  template Tensor<T> modified_block_forward(const Tensor<T>&, ResidualBlock<T>&, Mode);      \
  template Tensor<T> bot_block_forward(const Tensor<T>&, ResidualBlock<T>&, Mode);           \
  template Tensor<T> bot_irc_block_forward(const Tensor<T>&, ResidualBlock<T>&, Mode);

ROCKRES_INSTANTIATE_BLOCKS(float)
ROCKRES_INSTANTIATE_BLOCKS(double)

}  // namespace rockres
