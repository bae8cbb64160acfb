#include "plantid/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace plantid {

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), T{0});
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value) {
  BasicTensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  BasicTensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return BasicTensor(std::move(shape), std::move(data_));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw ShapeError("row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_to_string(shape_));
  }
  const std::size_t row = data_.size() / shape_[0];
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                     data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return BasicTensor(std::move(out_shape), std::move(out));
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (const T& v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
bool bit_identical(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  const Shape& inner = items.front().shape();
  std::vector<T> out;
  out.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack shape mismatch: " + shape_to_string(inner) + " vs " + shape_to_string(t.shape()));
    }
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return BasicTensor<T>(std::move(shape), std::move(out));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template bool bit_identical(const BasicTensor<float>&, const BasicTensor<float>&);
template bool bit_identical(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> stack(std::span<const BasicTensor<float>>);
template BasicTensor<double> stack(std::span<const BasicTensor<double>>);

}  // namespace plantid
