#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rockres/errors.hpp"

namespace rockres {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array. This is the plain value type; differentiable
/// handles are `Tensor<T>` in autograd.hpp.
template <typename T>
class NDArray {
 public:
  using value_type = T;

  NDArray() = default;
  explicit NDArray(Shape shape, T fill = T{0});
  NDArray(Shape shape, std::vector<T> data);

  static NDArray scalar(T v) { return NDArray(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  /// Default-constructed arrays hold no storage at all.
  bool is_null() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const T* ptr() const noexcept { return data_.data(); }
  T* ptr() noexcept { return data_.data(); }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Returns a copy with a new shape of equal element count.
  NDArray reshaped(Shape shape) const;

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  /// this += other, shapes must match.
  void add_inplace(const NDArray& other);
  bool all_finite() const;

  template <typename U>
  NDArray<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return NDArray<U>(shape_, std::move(out));
  }

  friend bool operator==(const NDArray& a, const NDArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Throws ShapeError unless `a == b`; `what` names the operation.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

extern template class NDArray<float>;
extern template class NDArray<double>;

}  // namespace rockres
