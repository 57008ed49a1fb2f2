#include "dcl/network.hpp"

#include <atomic>
#include <cmath>

#include "dcl/dcl_block.hpp"
#include "dcl/layers.hpp"

namespace dcl {

namespace {

std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>& probs) {
  if (logits.rank() != 2) throw ShapeMismatch("softmax_cross_entropy: logits must be N x C");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) throw ShapeMismatch("softmax_cross_entropy: label count differs from batch");
  probs = Tensor<T>(logits.shape());
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double sum = 0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
    const double log_sum = std::log(sum);
    for (std::size_t c = 0; c < C; ++c)
      probs[n * C + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx) - log_sum));
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw ShapeMismatch("label " + std::to_string(y) + " out of range");
    total += log_sum - static_cast<double>(row[y] - mx);
  }
  return static_cast<T>(total / static_cast<double>(N));
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed), id_(next_network_id()) {
  build_layers();
}

template <typename T>
Network<T>::Network(const Network& other) : spec_(other.spec_), seed_(other.seed_), id_(next_network_id()) {
  build_layers();
  params_ = other.params_;
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
Network<T>::~Network() = default;

template <typename T>
void Network<T>::build_layers() {
  if (spec_.shapes.size() != spec_.layers.size() + 1) chain_shapes(spec_);
  layers_.clear();
  params_.clear();
  for (std::size_t i = 0; i < spec_.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const Shape& in = spec_.shapes[i];
    const std::string& name = spec_.names[i];
    std::unique_ptr<Layer<T>> layer;
    switch (l.kind) {
      case LayerKind::Conv:
        layer = std::make_unique<ConvLayer<T>>(name, in, l.filters, l.kernel, l.kernel, l.stride, l.pad, l.relu, false);
        break;
      case LayerKind::FullyConnected:
        layer = std::make_unique<ConvLayer<T>>(name, in, l.filters, in[1], in[2], 1, 0, l.relu, true);
        break;
      case LayerKind::MaxPool: layer = std::make_unique<MaxPoolLayer<T>>(l.kernel, l.stride); break;
      case LayerKind::ReLU: layer = std::make_unique<ReluLayer<T>>(); break;
      case LayerKind::Dropout: layer = std::make_unique<DropoutLayer<T>>(l.drop_ratio); break;
      case LayerKind::DclBlock: layer = std::make_unique<DclLayer<T>>(name, in, *l.dcl); break;
      case LayerKind::SoftmaxLoss: break;
    }
    if (layer) {
      Rng rng = make_rng(seed_, 1, i);
      auto p = layer->make_params(rng);
      layer->first_param = params_.size();
      layer->param_count = p.size();
      for (auto& e : p) params_.push_back(std::move(e));
    }
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
const Layer<T>& Network<T>::layer(std::size_t i) const {
  if (i >= layers_.size() || !layers_[i]) throw UnknownLayer("layer " + std::to_string(i) + " has no parameters");
  return *layers_[i];
}

template <typename T>
std::vector<Param<T>>& Network<T>::mutable_params() noexcept {
  ++version_;
  return params_;
}

template <typename T>
std::size_t Network<T>::weight_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (!p.is_bias) n += p.value.size();
  return n;
}

template <typename T>
std::size_t Network<T>::bias_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.is_bias) n += p.value.size();
  return n;
}

template <typename T>
std::pair<std::size_t, std::size_t> Network<T>::param_range(std::size_t layer) const {
  if (layer >= layers_.size()) throw UnknownLayer("layer " + std::to_string(layer) + " out of range");
  if (!layers_[layer]) return {params_.size(), 0};
  return {layers_[layer]->first_param, layers_[layer]->param_count};
}

template <typename T>
void Network<T>::run_layers(ForwardCache<T>& cache, Mode mode, Rng& rng) const {
  const Tensor<T>& batch = cache.activations.front();
  if (batch.rank() != 4 || !(batch.shape().without_batch() == spec_.input_shape))
    throw ShapeChainError("batch shape " + batch.shape().str() + " does not match network input " +
                          spec_.input_shape.str());
  cache.network_id = id_;
  cache.version = version_;
  cache.mode = mode;
  cache.layers.assign(layers_.size(), {});
  const std::span<const Param<T>> all(params_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i]) continue;
    const auto& l = *layers_[i];
    Tensor<T> y = l.forward(cache.activations.back(), all.subspan(l.first_param, l.param_count), mode, rng,
                            cache.layers[i]);
    cache.activations.push_back(std::move(y));
  }
  ensure_finite(cache.activations.back(), "logits");
}

template <typename T>
Tensor<T> Network<T>::transform_input(const Tensor<T>& batch) const {
  if (spec_.input_shift == 0.0 && spec_.input_scale == 1.0) return batch;
  Tensor<T> x = batch;
  const T shift = static_cast<T>(spec_.input_shift), k = static_cast<T>(spec_.input_scale);
  for (auto& v : x.vec()) v = (v - shift) * k;
  return x;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode,
                                     Rng& rng) const {
  ForwardResult<T> r;
  r.cache.activations.push_back(transform_input(batch));
  run_layers(r.cache, mode, rng);
  const std::size_t N = batch.dim(0);
  r.logits = r.cache.activations.back().reshaped(Shape{N, spec_.num_classes});
  r.cache.labels.assign(labels.begin(), labels.end());
  r.loss = softmax_cross_entropy(r.logits, labels, r.cache.probs);
  if (!std::isfinite(static_cast<double>(r.loss))) throw NonFinite("loss is not finite");
  return r;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& batch) const {
  ForwardCache<T> cache;
  cache.activations.push_back(transform_input(batch));
  Rng unused(0);
  run_layers(cache, Mode::Eval, unused);
  return std::move(cache.activations.back()).reshaped(Shape{batch.dim(0), spec_.num_classes});
}

template <typename T>
Gradients<T> Network<T>::backward(const ForwardCache<T>& cache, T loss_weight) const {
  if (cache.network_id != id_ || cache.version != version_)
    throw StaleCache("forward cache does not belong to the current parameters");
  if (cache.mode != Mode::Train) throw StaleCache("backward needs a train-mode forward cache");
  const std::size_t N = cache.labels.size(), C = spec_.num_classes;
  Tensor<T> dy(Shape{N, C, 1, 1});
  const T scale = loss_weight / static_cast<T>(N);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      dy[n * C + c] = (cache.probs[n * C + c] - (static_cast<int>(c) == cache.labels[n] ? T(1) : T(0))) * scale;

  Gradients<T> g;
  g.params.resize(params_.size());
  g.active.assign(params_.size(), false);
  const std::span<const Param<T>> all(params_);
  const std::span<Tensor<T>> grads(g.params);
  std::size_t act = cache.activations.size() - 1;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (!layers_[i]) continue;
    const auto& l = *layers_[i];
    --act;
    dy = l.backward(cache.activations[act], cache.activations[act + 1], dy, all.subspan(l.first_param, l.param_count),
                    cache.layers[i], grads.subspan(l.first_param, l.param_count),
                    g.active.begin() + static_cast<std::ptrdiff_t>(l.first_param));
  }
  if (spec_.input_scale != 1.0) dy = dcl::scale(dy, static_cast<T>(spec_.input_scale));
  g.input = std::move(dy);
  return g;
}

template float softmax_cross_entropy(const Tensor<float>&, std::span<const int>, Tensor<float>&);
template double softmax_cross_entropy(const Tensor<double>&, std::span<const int>, Tensor<double>&);
template class Network<float>;
template class Network<double>;

}  // namespace dcl
