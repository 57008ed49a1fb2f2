#include "dcl/layers.hpp"

#include <cmath>

namespace dcl {

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w(std::move(shape));
  for (auto& v : w.vec()) v = static_cast<T>(uniform(rng, -limit, limit));
  return w;
}

template <typename T>
ConvLayer<T>::ConvLayer(std::string name, const Shape& input, std::size_t filters, std::size_t kernel_h,
                        std::size_t kernel_w, std::size_t stride, std::size_t pad, bool relu, bool fully_connected)
    : name_(std::move(name)),
      geom_(ConvGeometry::make(input[0], input[1], input[2], kernel_h, kernel_w, stride, pad)),
      filters_(filters),
      relu_(relu),
      fully_connected_(fully_connected) {}

template <typename T>
std::vector<Param<T>> ConvLayer<T>::make_params(Rng& rng) const {
  const std::size_t area = geom_.kernel_h * geom_.kernel_w;
  const std::size_t fan_in = geom_.patch();
  const std::size_t fan_out = fully_connected_ ? filters_ : filters_ * area;
  std::vector<Param<T>> p;
  p.push_back({name_ + ".weight",
               glorot_uniform<T>(Shape{filters_, geom_.channels, geom_.kernel_h, geom_.kernel_w}, fan_in, fan_out, rng),
               false});
  p.push_back({name_ + ".bias", Tensor<T>(Shape{filters_}), true});
  return p;
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode, Rng&,
                                LayerCache<T>&) const {
  Tensor<T> y = conv2d(x, params[0].value, params[1].value, geom_.stride, geom_.pad);
  if (relu_)
    for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> ConvLayer<T>::backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy,
                                 std::span<const Param<T>> params, const LayerCache<T>&, std::span<Tensor<T>> grads,
                                 std::vector<bool>::iterator active) const {
  Tensor<T> g = dy;
  if (relu_)
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > T(0))) g[i] = T(0);
  ConvGrads<T> cg = conv2d_backward(x, params[0].value, g, geom_.stride, geom_.pad);
  grads[0] = std::move(cg.weights);
  grads[1] = std::move(cg.bias);
  active[0] = active[1] = true;
  return std::move(cg.input);
}

template <typename T>
Tensor<T> MaxPoolLayer<T>::forward(const Tensor<T>& x, std::span<const Param<T>>, Mode, Rng&,
                                   LayerCache<T>& cache) const {
  PoolResult<T> r = maxpool2d(x, kernel_, stride_);
  cache.indices = std::move(r.argmax);
  return std::move(r.output);
}

template <typename T>
Tensor<T> MaxPoolLayer<T>::backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy,
                                    std::span<const Param<T>>, const LayerCache<T>& cache, std::span<Tensor<T>>,
                                    std::vector<bool>::iterator) const {
  return maxpool2d_backward(dy, cache.indices, x.shape());
}

template <typename T>
Tensor<T> DropoutLayer<T>::forward(const Tensor<T>& x, std::span<const Param<T>>, Mode mode, Rng& rng,
                                   LayerCache<T>& cache) const {
  if (mode == Mode::Eval || ratio_ == 0.0) {
    cache.tensors.clear();
    return x;
  }
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - ratio_));
  for (auto& m : mask.vec()) m = uniform01(rng) < ratio_ ? T(0) : keep_scale;
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
  cache.tensors = {std::move(mask)};
  return y;
}

template <typename T>
Tensor<T> DropoutLayer<T>::backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>& dy,
                                    std::span<const Param<T>>, const LayerCache<T>& cache, std::span<Tensor<T>>,
                                    std::vector<bool>::iterator) const {
  if (cache.tensors.empty()) return dy;
  const Tensor<T>& mask = cache.tensors.front();
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

template <typename T>
Tensor<T> ReluLayer<T>::forward(const Tensor<T>& x, std::span<const Param<T>>, Mode, Rng&, LayerCache<T>&) const {
  return relu(x);
}

template <typename T>
Tensor<T> ReluLayer<T>::backward(const Tensor<T>&, const Tensor<T>& y, const Tensor<T>& dy,
                                 std::span<const Param<T>>, const LayerCache<T>&, std::span<Tensor<T>>,
                                 std::vector<bool>::iterator) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template Tensor<float> glorot_uniform(Shape, std::size_t, std::size_t, Rng&);
template Tensor<double> glorot_uniform(Shape, std::size_t, std::size_t, Rng&);
template class ConvLayer<float>;
template class ConvLayer<double>;
template class MaxPoolLayer<float>;
template class MaxPoolLayer<double>;
template class DropoutLayer<float>;
template class DropoutLayer<double>;
template class ReluLayer<float>;
template class ReluLayer<double>;

}  // namespace dcl
