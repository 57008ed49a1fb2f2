#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dcl/arch.hpp"
#include "dcl/rng.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

enum class Mode { Train, Eval };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool is_bias = false;
};

// Per-layer saved state between forward and backward. The meaning of each
// slot is private to the layer that wrote it.
template <typename T>
struct LayerCache {
  std::vector<Tensor<T>> tensors;
  std::vector<std::size_t> indices;
};

template <typename T>
struct ForwardCache {
  std::uint64_t network_id = 0;
  std::uint64_t version = 0;
  Mode mode = Mode::Eval;
  std::vector<Tensor<T>> activations;  // activations[i] is the input of layer i; back() = logits
  std::vector<LayerCache<T>> layers;
  std::vector<int> labels;
  Tensor<T> probs;  // softmax of the logits, N x classes
};

template <typename T>
struct ForwardResult {
  T loss = 0;
  Tensor<T> logits;  // N x classes
  ForwardCache<T> cache;
};

template <typename T>
struct Gradients {
  std::vector<Tensor<T>> params;  // aligned with Network::params()
  std::vector<bool> active;       // false: the parameter took no part in this step
  Tensor<T> input;
};

// A layer reads its parameters from the network's flat parameter list through
// the [first, first + count) slice it was assigned at construction.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                            LayerCache<T>& cache) const = 0;

  // dy is the gradient w.r.t. y = forward(x). Fills grads/active (one entry
  // per parameter of this layer) and returns the gradient w.r.t. x.
  virtual Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy,
                             std::span<const Param<T>> params, const LayerCache<T>& cache,
                             std::span<Tensor<T>> grads, std::vector<bool>::iterator active) const = 0;

  // Freshly initialized parameters (Glorot-uniform weights, zero biases).
  virtual std::vector<Param<T>> make_params(Rng&) const { return {}; }

  std::size_t first_param = 0, param_count = 0;
};

template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  ~Network();

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const std::vector<Param<T>>& params() const noexcept { return params_; }
  // Mutable access invalidates outstanding forward caches.
  std::vector<Param<T>>& mutable_params() noexcept;
  std::size_t weight_count() const noexcept;
  std::size_t bias_count() const noexcept;
  // Index range of a layer's parameters in params().
  std::pair<std::size_t, std::size_t> param_range(std::size_t layer) const;
  // Throws UnknownLayer for the softmax loss, which has no Layer object.
  const Layer<T>& layer(std::size_t i) const;

  // batch is N x C x H x W; labels has N entries in [0, num_classes).
  ForwardResult<T> forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode, Rng& rng) const;
  // Eval-mode logits without a loss.
  Tensor<T> predict(const Tensor<T>& batch) const;

  // Analytic gradients of loss_weight * mean cross-entropy. Requires a
  // train-mode cache produced by this network at its current parameters.
  Gradients<T> backward(const ForwardCache<T>& cache, T loss_weight = T(1)) const;

  // Copies parameters from a network of the same architecture (any precision).
  template <typename U>
  void load_params_from(const Network<U>& other);

 private:
  NetworkSpec spec_;
  std::uint64_t seed_ = 0;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Param<T>> params_;

  void build_layers();
  void run_layers(ForwardCache<T>& cache, Mode mode, Rng& rng) const;
  Tensor<T> transform_input(const Tensor<T>& batch) const;
};

// Mean softmax cross-entropy; fills probs (N x C).
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>& probs);

extern template class Network<float>;
extern template class Network<double>;

template <typename T>
template <typename U>
void Network<T>::load_params_from(const Network<U>& other) {
  const auto& src = other.params();
  if (src.size() != params_.size()) throw ShapeMismatch("parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i].value.shape() == params_[i].value.shape()) || src[i].name != params_[i].name)
      throw ShapeMismatch("parameter " + params_[i].name + " differs between networks");
    for (std::size_t j = 0; j < params_[i].value.size(); ++j) params_[i].value[j] = static_cast<T>(src[i].value[j]);
  }
  ++version_;
}

}  // namespace dcl
