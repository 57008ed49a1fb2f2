#include "dcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dcl {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeMismatch("shape extents must be >= 1");
    if (n > std::numeric_limits<std::size_t>::max() / d) throw Overflow("shape element count overflows");
    n *= d;
  }
  return n;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), numel_(checked_product(dims_)) {}

Shape Shape::with_batch(std::size_t n) const {
  std::vector<std::size_t> d;
  d.reserve(dims_.size() + 1);
  d.push_back(n);
  d.insert(d.end(), dims_.begin(), dims_.end());
  return Shape(std::move(d));
}

Shape Shape::without_batch() const {
  if (dims_.empty()) throw ShapeMismatch("cannot drop batch dimension of a rank-0 shape");
  return Shape(std::vector<std::size_t>(dims_.begin() + 1, dims_.end()));
}

std::string Shape::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeMismatch("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.rank()) throw ShapeMismatch("index rank mismatch for shape " + shape_.str());
  std::size_t off = 0, i = 0;
  for (std::size_t v : idx) {
    if (v >= shape_[i]) throw ShapeMismatch("index out of range for shape " + shape_.str());
    off = off * shape_[i] + v;
    ++i;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> idx) {
  return data_[offset(idx)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
  return data_[offset(idx)];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NonFinite(std::string(what) + " produced a non-finite value");
}

template class Tensor<float>;
template class Tensor<double>;
template void ensure_finite(const Tensor<float>&, const char*);
template void ensure_finite(const Tensor<double>&, const char*);

}  // namespace dcl
