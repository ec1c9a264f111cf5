#include "rockres/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rockres {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + to_string(shape));
  }
}

}  // namespace

template <typename T>
NDArray<T>::NDArray(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(static_cast<std::size_t>(rockres::numel(shape_)), fill);
}

template <typename T>
NDArray<T>::NDArray(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (rockres::numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("element count " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

template <typename T>
NDArray<T> NDArray<T>::reshaped(Shape shape) const {
  if (rockres::numel(shape) != numel()) {
    throw ShapeError("reshape " + to_string(shape_) + " -> " + to_string(shape) +
                     " changes element count");
  }
  return NDArray(std::move(shape), data_);
}

template <typename T>
void NDArray<T>::add_inplace(const NDArray& other) {
  require_same_shape(shape_, other.shape_, "add_inplace");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

template <typename T>
bool NDArray<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class NDArray<float>;
template class NDArray<double>;

}  // namespace rockres
