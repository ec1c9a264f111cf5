#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rockres/autograd.hpp"

namespace rockres {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLayerNormEps = 1e-5;

/// Running statistics owned by a batch-norm layer. Starts at mean 0, var 1.
template <typename T>
struct BatchNormState {
  NDArray<T> running_mean;
  NDArray<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::int64_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

// Convolution over N x Cin x H x W with zero padding. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);

/// out = input * weight^T + bias; input N x Din, weight Dout x Din.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Per-channel normalization of N x C x H x W. Train mode uses batch
/// statistics and updates `state`; eval mode reads `state` only.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, Mode mode, double eps = kBatchNormEps,
                       double momentum = kBatchNormMomentum);

/// Normalizes over the trailing `normalized_rank` axes of x. gamma and beta
/// have exactly those trailing dimensions.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t normalized_rank, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps = kLayerNormEps);

/// Layer norm over the channel axis of N x C x H x W, independently at every
/// spatial position. gamma and beta have shape [C].
template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps = kLayerNormEps);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

enum class PoolKind { max, avg, global_avg };

/// Max pooling ignores padded cells; average pooling counts them as zeros.
/// global_avg ignores k/stride/padding and returns N x C x 1 x 1.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel = 1, int stride = 1,
                 int padding = 0);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return pool2d(x, PoolKind::global_avg);
}

/// Shape-exact elementwise sum; no broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Shape-exact elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Batched product of rank-3 operands, op(a)[b] * op(b)[b]. A batch
/// dimension of 1 broadcasts against the other operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

/// Rows of a rank-2 table selected by index; gradients scatter-add back.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> indices);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace rockres
