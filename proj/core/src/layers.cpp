#include "rockres/layers.hpp"

#include <cmath>

#include "rockres/rng.hpp"

namespace rockres {

template <typename T>
Tensor<T> make_uniform_param(const InitContext& ctx, const std::string& name, Shape shape,
                             double bound) {
  CounterRng rng(ctx.seed, hash_string(name));
  NDArray<T> v(std::move(shape));
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(v), true);
}

template <typename T>
Tensor<T> make_constant_param(Shape shape, T value) {
  return Tensor<T>(NDArray<T>(std::move(shape), value), true);
}

template <typename T>
ConvLayer<T> ConvLayer<T>::make(const InitContext& ctx, std::string name, std::int64_t cin,
                                std::int64_t cout, int kernel, int stride, int padding) {
  ConvLayer layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kernel * kernel));
  layer.weight = make_uniform_param<T>(ctx, name + ".weight", Shape{cout, cin, kernel, kernel}, bound);
  layer.name = std::move(name);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename T>
std::string ConvLayer<T>::describe() const {
  return name + " conv2d " + std::to_string(in_channels()) + "->" + std::to_string(out_channels()) +
         " k" + std::to_string(kernel()) + " s" + std::to_string(stride) + " p" +
         std::to_string(padding);
}

template <typename T>
NormLayer<T> NormLayer<T>::make(std::string name, NormKind kind, std::int64_t channels) {
  NormLayer layer;
  layer.name = std::move(name);
  layer.kind = kind;
  layer.gamma = make_constant_param<T>(Shape{channels}, T{1});
  layer.beta = make_constant_param<T>(Shape{channels}, T{0});
  if (kind == NormKind::batch) layer.state = BatchNormState<T>(channels);
  return layer;
}

template <typename T>
Tensor<T> NormLayer<T>::forward(const Tensor<T>& x, Mode mode) {
  if (kind == NormKind::batch) return batch_norm2d(x, gamma, beta, state, mode);
  return channel_layer_norm(x, gamma, beta);
}

template <typename T>
std::string NormLayer<T>::describe() const {
  return name + (kind == NormKind::batch ? " batch_norm " : " layer_norm ") +
         std::to_string(channels());
}

std::string ActLayer::describe() const {
  return name + (kind == ActKind::relu ? " relu" : " gelu");
}

template <typename T>
LinearLayer<T> LinearLayer<T>::make(const InitContext& ctx, std::string name, std::int64_t din,
                                    std::int64_t dout) {
  LinearLayer layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(din));
  layer.weight = make_uniform_param<T>(ctx, name + ".weight", Shape{dout, din}, bound);
  layer.bias = make_uniform_param<T>(ctx, name + ".bias", Shape{dout}, bound);
  layer.name = std::move(name);
  return layer;
}

template <typename T>
std::string LinearLayer<T>::describe() const {
  return name + " linear " + std::to_string(weight.dim(1)) + "->" + std::to_string(weight.dim(0));
}

template Tensor<float> make_uniform_param<float>(const InitContext&, const std::string&, Shape, double);
template Tensor<double> make_uniform_param<double>(const InitContext&, const std::string&, Shape, double);
template Tensor<float> make_constant_param<float>(Shape, float);
template Tensor<double> make_constant_param<double>(Shape, double);
template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct NormLayer<float>;
template struct NormLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;

}  // namespace rockres
