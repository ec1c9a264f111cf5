#include "rockres/attention.hpp"

#include <cmath>

namespace rockres {

void MHSAConfig::validate() const {
  if (channels < 1 || heads < 1) throw ConfigError("mhsa: channels and heads must be positive");
  if (channels % heads != 0) {
    throw ConfigError("mhsa: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (height < 1 || width < 1) throw ConfigError("mhsa: spatial size must be positive");
}

std::int64_t mhsa_param_count(const MHSAConfig& config) {
  const std::int64_t c = config.channels;
  return 4 * c * c + (config.height + config.width) * config.head_dim();
}

template <typename T>
MHSALayer<T> MHSALayer<T>::make(const InitContext& ctx, std::string name,
                                const MHSAConfig& config) {
  config.validate();
  MHSALayer layer;
  layer.config = config;
  const std::int64_t c = config.channels, d = config.head_dim();
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(c));
  const double pos_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const Shape proj{c, c, 1, 1};
  layer.query = make_uniform_param<T>(ctx, name + ".query.weight", proj, proj_bound);
  layer.key = make_uniform_param<T>(ctx, name + ".key.weight", proj, proj_bound);
  layer.value = make_uniform_param<T>(ctx, name + ".value.weight", proj, proj_bound);
  layer.output = make_constant_param<T>(proj, T{0});
  layer.rel_height = make_uniform_param<T>(ctx, name + ".rel_height", Shape{config.height, d}, pos_bound);
  layer.rel_width = make_uniform_param<T>(ctx, name + ".rel_width", Shape{config.width, d}, pos_bound);
  layer.name = std::move(name);
  return layer;
}

template <typename T>
void MHSALayer<T>::collect_parameters(std::vector<NamedTensor<T>>& out) const {
  out.push_back({name + ".query.weight", query});
  out.push_back({name + ".key.weight", key});
  out.push_back({name + ".value.weight", value});
  out.push_back({name + ".output.weight", output});
  out.push_back({name + ".rel_height", rel_height});
  out.push_back({name + ".rel_width", rel_width});
}

template <typename T>
std::int64_t MHSALayer<T>::param_count() const {
  return query.numel() + key.numel() + value.numel() + output.numel() + rel_height.numel() +
         rel_width.numel();
}

template <typename T>
std::string MHSALayer<T>::describe() const {
  return name + " mhsa " + std::to_string(config.channels) + " heads=" +
         std::to_string(config.heads) + " pos=" + std::to_string(config.height) + "x" +
         std::to_string(config.width);
}

namespace {

template <typename T>
struct AttentionParts {
  Tensor<T> weights;  // (N*heads) x L x L
  Tensor<T> values;   // (N*heads) x d x L
};

template <typename T>
AttentionParts<T> attend(const Tensor<T>& x, const MHSALayer<T>& layer) {
  const MHSAConfig& cfg = layer.config;
  if (x.shape().size() != 4) throw ShapeError("mhsa: expected N x C x H x W, got " + to_string(x.shape()));
  if (x.dim(1) != cfg.channels) {
    throw ShapeError("mhsa: input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                     std::to_string(cfg.channels));
  }
  if (x.dim(2) != cfg.height || x.dim(3) != cfg.width) {
    throw ShapeError("mhsa: input spatial " + std::to_string(x.dim(2)) + "x" +
                     std::to_string(x.dim(3)) + " does not match bound position embeddings " +
                     std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  const std::int64_t n = x.dim(0), d = cfg.head_dim(), l = cfg.sequence_length();
  const Shape per_head{n * cfg.heads, d, l};
  const Tensor<T> none;
  auto q = reshape(conv2d(x, layer.query, none, 1, 0), per_head);
  auto k = reshape(conv2d(x, layer.key, none, 1, 0), per_head);
  auto v = reshape(conv2d(x, layer.value, none, 1, 0), per_head);

  std::vector<std::int64_t> rows(static_cast<std::size_t>(l)), cols(static_cast<std::size_t>(l));
  for (std::int64_t j = 0; j < l; ++j) {
    rows[static_cast<std::size_t>(j)] = j / cfg.width;
    cols[static_cast<std::size_t>(j)] = j % cfg.width;
  }
  auto pos = add(gather_rows(layer.rel_height, std::span<const std::int64_t>(rows)),
                 gather_rows(layer.rel_width, std::span<const std::int64_t>(cols)));
  pos = reshape(pos, Shape{1, l, d});

  auto content = matmul(q, k, /*transpose_a=*/true, /*transpose_b=*/false);
  auto position = matmul(q, pos, /*transpose_a=*/true, /*transpose_b=*/true);
  auto logits = scale(add(content, position), 1.0 / std::sqrt(static_cast<double>(d)));
  return {softmax(logits, -1), v};
}

}  // namespace

template <typename T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const MHSALayer<T>& layer) {
  auto parts = attend(x, layer);
  auto mixed = matmul(parts.values, parts.weights, /*transpose_a=*/false, /*transpose_b=*/true);
  mixed = reshape(mixed, x.shape());
  return conv2d(mixed, layer.output, Tensor<T>(), 1, 0);
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const MHSALayer<T>& layer) {
  const std::int64_t l = layer.config.sequence_length();
  return reshape(attend(x, layer).weights, Shape{x.dim(0), layer.config.heads, l, l});
}

template struct MHSALayer<float>;
template struct MHSALayer<double>;
template Tensor<float> mhsa_forward(const Tensor<float>&, const MHSALayer<float>&);
template Tensor<double> mhsa_forward(const Tensor<double>&, const MHSALayer<double>&);
template Tensor<float> attention_weights(const Tensor<float>&, const MHSALayer<float>&);
template Tensor<double> attention_weights(const Tensor<double>&, const MHSALayer<double>&);

}  // namespace rockres
