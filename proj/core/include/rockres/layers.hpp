#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rockres/ops.hpp"

namespace rockres {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Non-trainable state (batch-norm running statistics) exposed by name.
template <typename T>
struct NamedBuffer {
  std::string name;
  NDArray<T>* buffer;
};

/// Parameter initialization is keyed by (seed, parameter name), so a
/// parameter's initial value does not depend on what else the model holds.
struct InitContext {
  std::uint64_t seed = 0;
};

/// Uniform in [-bound, bound], drawn in double precision then narrowed.
template <typename T>
Tensor<T> make_uniform_param(const InitContext& ctx, const std::string& name, Shape shape,
                             double bound);

template <typename T>
Tensor<T> make_constant_param(Shape shape, T value);

template <typename T>
struct ConvLayer {
  std::string name;
  Tensor<T> weight;  // Cout x Cin x k x k, no bias
  int stride = 1;
  int padding = 0;

  /// Fan-in-scaled uniform weights.
  static ConvLayer make(const InitContext& ctx, std::string name, std::int64_t cin,
                        std::int64_t cout, int kernel, int stride, int padding);

  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
  int kernel() const { return static_cast<int>(weight.dim(2)); }
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, Tensor<T>(), stride, padding); }
  std::string describe() const;
};

enum class NormKind { batch, layer };

template <typename T>
struct NormLayer {
  std::string name;
  NormKind kind = NormKind::batch;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> state;  // batch norm only

  /// gamma = 1, beta = 0.
  static NormLayer make(std::string name, NormKind kind, std::int64_t channels);

  std::int64_t channels() const { return gamma.dim(0); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  std::string describe() const;
};

enum class ActKind { relu, gelu };

struct ActLayer {
  std::string name;
  ActKind kind = ActKind::relu;

  template <typename T>
  Tensor<T> forward(const Tensor<T>& x) const {
    return kind == ActKind::relu ? relu(x) : gelu(x);
  }
  std::string describe() const;
};

template <typename T>
struct LinearLayer {
  std::string name;
  Tensor<T> weight;  // Dout x Din
  Tensor<T> bias;    // Dout

  static LinearLayer make(const InitContext& ctx, std::string name, std::int64_t din,
                          std::int64_t dout);
  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  std::string describe() const;
};

}  // namespace rockres
