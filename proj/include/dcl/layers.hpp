#pragma once

#include <cstddef>
#include <string>

#include "dcl/kernels.hpp"
#include "dcl/network.hpp"

namespace dcl {

// Glorot-uniform init on [-sqrt(6 / (fan_in + fan_out)), +sqrt(...)].
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Convolution with an optional fused ReLU. A fully-connected layer is the
// same thing with a kernel covering the whole input (weights O x C x H x W).
template <typename T>
class ConvLayer final : public Layer<T> {
 public:
  ConvLayer(std::string name, const Shape& input, std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
            std::size_t stride, std::size_t pad, bool relu, bool fully_connected);

  Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                    LayerCache<T>& cache) const override;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, std::span<const Param<T>> params,
                     const LayerCache<T>& cache, std::span<Tensor<T>> grads,
                     std::vector<bool>::iterator active) const override;
  std::vector<Param<T>> make_params(Rng& rng) const override;

 private:
  std::string name_;
  ConvGeometry geom_;
  std::size_t filters_;
  bool relu_, fully_connected_;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                    LayerCache<T>& cache) const override;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, std::span<const Param<T>> params,
                     const LayerCache<T>& cache, std::span<Tensor<T>> grads,
                     std::vector<bool>::iterator active) const override;

 private:
  std::size_t kernel_, stride_;
};

// Inverted dropout: kept units are scaled by 1 / (1 - ratio) at train time so
// eval mode is a pass-through.
template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(double ratio) : ratio_(ratio) {}
  Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                    LayerCache<T>& cache) const override;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, std::span<const Param<T>> params,
                     const LayerCache<T>& cache, std::span<Tensor<T>> grads,
                     std::vector<bool>::iterator active) const override;

 private:
  double ratio_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                    LayerCache<T>& cache) const override;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, std::span<const Param<T>> params,
                     const LayerCache<T>& cache, std::span<Tensor<T>> grads,
                     std::vector<bool>::iterator active) const override;
};

}  // namespace dcl
