#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcl/dcl_config.hpp"
#include "dcl/kernels.hpp"
#include "dcl/network.hpp"

namespace dcl {

// z[k] = (prod_t v[t][k] + epsilon)^(1/T). Every v[t][k] must be >= 0.
template <typename T>
std::vector<T> fuse(std::span<const std::vector<T>> v, T epsilon);

// dz/dv[t][k] * dz[k], using exclusive products so v == 0 never divides.
template <typename T>
std::vector<std::vector<T>> fuse_backward(std::span<const std::vector<T>> v, T epsilon, std::span<const T> dz);

// Unordered pairs (i, j), i < j, in lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> branch_pairs(std::size_t branches);
// Uniform draw over branch_pairs(branches). Requires branches >= 3.
std::pair<std::size_t, std::size_t> sample_active_pair(std::size_t branches, Rng& rng);

// Parameters of one block in plain per-branch form.
//   branch_weights[t]: M[t] x patch     branch_bias[t]: M[t]
//   fusion_weights[t]: M[t] x K2        fusion_bias[t]: K2
// patch = C * kh * kw of the branch convolution.
template <typename T>
struct DclState {
  DclConfig config;
  std::size_t patch = 0;
  std::vector<Tensor<T>> branch_weights, branch_bias, fusion_weights, fusion_bias;

  std::size_t weight_count() const;
  std::size_t bias_count() const;
  static DclState random(const DclConfig& config, std::size_t patch, Rng& rng, double scale = 1.0);
};

// The collaborative block: T branch convolutions (each with ReLU), a per-position
// projection of each branch to K2 channels with ReLU, then multiplicative
// fusion with a T-th root.
//   train + deterministic: all T branches, epsilon 10^-T
//   train + stochastic:    one sampled pair per call, epsilon 10^-2
//   eval  + stochastic:    mean of the fused response over all pairs
//   eval  + deterministic: all T branches
template <typename T>
class DclLayer final : public Layer<T> {
 public:
  DclLayer(std::string name, const Shape& input, DclConfig config);

  Tensor<T> forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                    LayerCache<T>& cache) const override;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, std::span<const Param<T>> params,
                     const LayerCache<T>& cache, std::span<Tensor<T>> grads,
                     std::vector<bool>::iterator active) const override;
  std::vector<Param<T>> make_params(Rng& rng) const override;

  const DclConfig& config() const noexcept { return config_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }

  // Cache layout: indices = branches computed this call; tensors =
  // [cols, Y[0], V[0], Y[1], V[1], ...] in channel-major (channels x N*P)
  // form for those branches, where Y is the post-ReLU branch response and V
  // the post-ReLU projection.
  static const Tensor<T>& cached_branch(const LayerCache<T>& cache, std::size_t slot) {
    return cache.tensors.at(1 + 2 * slot);
  }
  static const Tensor<T>& cached_projection(const LayerCache<T>& cache, std::size_t slot) {
    return cache.tensors.at(2 + 2 * slot);
  }

  // Parameter slice <-> plain state.
  DclState<T> state(std::span<const Param<T>> params) const;
  std::vector<Param<T>> params_from(const DclState<T>& state) const;

 private:
  std::string name_;
  DclConfig config_;
  ConvGeometry geom_;
};

// Runs one block on an NCHW batch with the given state.
template <typename T>
Tensor<T> dcl_forward(const DclState<T>& state, const Shape& input, const Tensor<T>& x, Mode mode, Rng& rng,
                      LayerCache<T>* cache = nullptr);

// Responses of every branch at one position (all-T deterministic form).
template <typename T>
struct PositionResponse {
  std::vector<std::vector<T>> branch;      // y[t], post-ReLU, length M[t]
  std::vector<std::vector<T>> projection;  // W[t]^T y[t] + c[t], pre-ReLU, length K2
  std::vector<std::vector<T>> fused_in;    // v[t] = ReLU(projection)
  std::vector<T> z;
};

template <typename T>
PositionResponse<T> respond_at(const DclState<T>& state, std::span<const T> patch);

// Brute-force compositional expansion of z[k]^T with epsilon dropped:
// sum over every choice (m[1] .. m[T]) of prod_t W[t][m[t], k] * prod_t y[t][m[t]].
// Nonzero fusion biases enter as one extra constant unit per branch. Requires
// every projection at k to be strictly positive.
template <typename T>
struct Expansion {
  T value = 0;
  std::size_t terms = 0;
};
template <typename T>
Expansion<T> compositional_expand(const DclState<T>& state, std::span<const T> patch, std::size_t k);

// Bilinear reference for T = 2: U[i, j, k] = W1[i, k] * W2[j, k] over the
// branch responses augmented with a constant 1 (whose weight is the fusion
// bias). U has shape (M1 + 1) x (M2 + 1) x K2.
template <typename T>
struct BcnnReference {
  Tensor<T> U;
};
template <typename T>
BcnnReference<T> make_bcnn_reference(const DclState<T>& state);

template <typename T>
struct BcnnComparison {
  T dcl_sq = 0;    // z^2 - epsilon
  T bilinear = 0;  // sum_ij U[i, j, k] y1[i] y2[j]
};
template <typename T>
BcnnComparison<T> bcnn_equivalence(const DclState<T>& state, std::span<const T> patch, std::size_t k);

// State of the DCL block at `layer` of a network, and the reverse.
template <typename T>
DclState<T> extract_dcl_state(const Network<T>& net, std::size_t layer);
template <typename T>
void store_dcl_state(Network<T>& net, std::size_t layer, const DclState<T>& state);

}  // namespace dcl
