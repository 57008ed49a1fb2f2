#include "dcl/dcl_block.hpp"

#include <cmath>

#include "dcl/layers.hpp"

namespace dcl {

namespace {

template <typename T>
T root(T x, std::size_t order) {
  if (order == 2) return std::sqrt(x);
  if (order == 3) return std::cbrt(x);
  return std::pow(x, T(1) / static_cast<T>(order));
}

// z[i] = root(prod_t v[t][i] + eps)
template <typename T>
void fuse_kernel(std::span<const T* const> v, std::size_t n, T eps, T* z) {
  const std::size_t order = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    T p = v[0][i];
    for (std::size_t t = 1; t < order; ++t) p *= v[t][i];
    z[i] = root(p + eps, order);
  }
}

// dv[t][i] = dz[i] * (1/T) (P + eps)^(1/T - 1) prod_{s != t} v[s][i], where
// (P + eps)^(1/T - 1) = z / (P + eps) and the exclusive product comes from
// prefix/suffix products.
template <typename T>
void fuse_backward_kernel(std::span<const T* const> v, std::size_t n, T eps, const T* dz, std::span<T* const> dv) {
  const std::size_t order = v.size();
  std::vector<T> prefix(order + 1), suffix(order + 1);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[0] = T(1);
    for (std::size_t t = 0; t < order; ++t) prefix[t + 1] = prefix[t] * v[t][i];
    suffix[order] = T(1);
    for (std::size_t t = order; t-- > 0;) suffix[t] = suffix[t + 1] * v[t][i];
    const T shifted = prefix[order] + eps;
    const T z = root(shifted, order);
    const T common = dz[i] * z / (static_cast<T>(order) * shifted);
    for (std::size_t t = 0; t < order; ++t) dv[t][i] = common * prefix[t] * suffix[t + 1];
  }
}

template <typename T>
void check_fuse_inputs(std::span<const std::vector<T>> v, T epsilon) {
  if (v.empty()) throw ShapeMismatch("fuse: need at least one input vector");
  if (!(epsilon >= T(0))) throw PreconditionViolated("fuse: epsilon must be >= 0");
  for (const auto& vt : v) {
    if (vt.size() != v.front().size()) throw ShapeMismatch("fuse: input vectors differ in length");
    for (T e : vt)
      if (e < T(0)) throw NegativeInput("fuse: inputs must be non-negative (ReLU outputs)");
  }
}

template <typename T>
void row_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c];
    out[r] = s;
  }
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
  for (auto& e : v) e = e > T(0) ? e : T(0);
}

}  // namespace

template <typename T>
std::vector<T> fuse(std::span<const std::vector<T>> v, T epsilon) {
  check_fuse_inputs(v, epsilon);
  std::vector<const T*> ptrs;
  for (const auto& vt : v) ptrs.push_back(vt.data());
  std::vector<T> z(v.front().size());
  fuse_kernel<T>(ptrs, z.size(), epsilon, z.data());
  return z;
}

template <typename T>
std::vector<std::vector<T>> fuse_backward(std::span<const std::vector<T>> v, T epsilon, std::span<const T> dz) {
  check_fuse_inputs(v, epsilon);
  if (dz.size() != v.front().size()) throw ShapeMismatch("fuse_backward: upstream length differs");
  std::vector<const T*> ptrs;
  for (const auto& vt : v) ptrs.push_back(vt.data());
  std::vector<std::vector<T>> dv(v.size(), std::vector<T>(dz.size()));
  std::vector<T*> out;
  for (auto& d : dv) out.push_back(d.data());
  fuse_backward_kernel<T>(ptrs, dz.size(), epsilon, dz.data(), out);
  return dv;
}

std::vector<std::pair<std::size_t, std::size_t>> branch_pairs(std::size_t branches) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < branches; ++i)
    for (std::size_t j = i + 1; j < branches; ++j) pairs.emplace_back(i, j);
  return pairs;
}

std::pair<std::size_t, std::size_t> sample_active_pair(std::size_t branches, Rng& rng) {
  if (branches < 3) throw InvalidConfig("pair sampling needs T >= 3");
  const auto pairs = branch_pairs(branches);
  return pairs[uniform_index(rng, pairs.size())];
}

template <typename T>
std::size_t DclState<T>::weight_count() const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < branch_weights.size(); ++t) n += branch_weights[t].size() + fusion_weights[t].size();
  return n;
}

template <typename T>
std::size_t DclState<T>::bias_count() const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < branch_bias.size(); ++t) n += branch_bias[t].size() + fusion_bias[t].size();
  return n;
}

template <typename T>
DclState<T> DclState<T>::random(const DclConfig& config, std::size_t patch, Rng& rng, double scale) {
  config.validate();
  DclState s;
  s.config = config;
  s.patch = patch;
  const std::size_t K2 = config.fused_channels;
  auto draw = [&](Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(uniform(rng, -scale, scale));
    return t;
  };
  for (std::size_t m : config.branch_filters) {
    s.branch_weights.push_back(draw(Shape{m, patch}));
    s.branch_bias.push_back(draw(Shape{m}));
    s.fusion_weights.push_back(draw(Shape{m, K2}));
    s.fusion_bias.push_back(draw(Shape{K2}));
  }
  return s;
}

template <typename T>
DclLayer<T>::DclLayer(std::string name, const Shape& input, DclConfig config)
    : name_(std::move(name)), config_(std::move(config)) {
  config_.validate();
  geom_ = config_.fully_connected()
              ? ConvGeometry::make(input[0], input[1], input[2], input[1], input[2], 1, 0)
              : ConvGeometry::make(input[0], input[1], input[2], config_.kernel, config_.kernel, config_.stride,
                                   config_.pad);
}

template <typename T>
std::vector<Param<T>> DclLayer<T>::make_params(Rng& rng) const {
  const std::size_t K2 = config_.fused_channels, area = geom_.kernel_h * geom_.kernel_w;
  std::vector<Param<T>> p;
  for (std::size_t t = 0; t < config_.branches(); ++t) {
    const std::size_t m = config_.branch_filters[t];
    const std::string b = name_ + ".branch" + std::to_string(t), f = name_ + ".fusion" + std::to_string(t);
    const std::size_t fan_out = config_.fully_connected() ? m : m * area;
    p.push_back({b + ".weight",
                 glorot_uniform<T>(Shape{m, geom_.channels, geom_.kernel_h, geom_.kernel_w}, geom_.patch(), fan_out,
                                   rng),
                 false});
    p.push_back({b + ".bias", Tensor<T>(Shape{m}), true});
    p.push_back({f + ".weight", glorot_uniform<T>(Shape{m, K2}, m, K2, rng), false});
    p.push_back({f + ".bias", Tensor<T>(Shape{K2}), true});
  }
  return p;
}

template <typename T>
Tensor<T> DclLayer<T>::forward(const Tensor<T>& x, std::span<const Param<T>> params, Mode mode, Rng& rng,
                               LayerCache<T>& cache) const {
  if (x.rank() != 4 || x.dim(1) != geom_.channels || x.dim(2) != geom_.height || x.dim(3) != geom_.width)
    throw ShapeMismatch(name_ + ": unexpected input shape " + x.shape().str());
  const std::size_t N = x.dim(0), P = geom_.positions(), NP = N * P, K2 = config_.fused_channels;
  const std::size_t T_all = config_.branches();
  const bool stochastic = config_.strategy == DclStrategy::Stochastic;

  std::vector<std::size_t> computed;
  if (mode == Mode::Train && stochastic) {
    auto [i, j] = sample_active_pair(T_all, rng);
    computed = {i, j};
  } else {
    for (std::size_t t = 0; t < T_all; ++t) computed.push_back(t);
  }

  Tensor<T> cols(Shape{geom_.patch(), NP});
  im2col(x.data(), N, geom_, cols.data());
  cache.tensors.clear();
  cache.tensors.push_back(cols);
  cache.indices = computed;
  for (std::size_t t : computed) {
    const std::size_t m = config_.branch_filters[t];
    const Param<T>* p = &params[4 * t];
    Tensor<T> y(Shape{m, NP});
    gemm<T>(Trans::No, Trans::No, m, NP, geom_.patch(), T(1), p[0].value.data(), cols.data(), T(0), y.data());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t q = 0; q < NP; ++q) y[r * NP + q] += p[1].value[r];
    relu_inplace(y.vec());
    Tensor<T> v(Shape{K2, NP});
    gemm<T>(Trans::Yes, Trans::No, K2, NP, m, T(1), p[2].value.data(), y.data(), T(0), v.data());
    for (std::size_t k = 0; k < K2; ++k)
      for (std::size_t q = 0; q < NP; ++q) v[k * NP + q] += p[3].value[k];
    relu_inplace(v.vec());
    cache.tensors.push_back(std::move(y));
    cache.tensors.push_back(std::move(v));
  }

  std::vector<T> z(K2 * NP);
  if (mode == Mode::Eval && stochastic) {
    const auto pairs = branch_pairs(T_all);
    std::vector<T> tmp(K2 * NP);
    const T eps = static_cast<T>(fusion_epsilon(2));
    for (const auto& [i, j] : pairs) {
      const T* ptrs[2] = {cached_projection(cache, i).data(), cached_projection(cache, j).data()};
      fuse_kernel<T>(ptrs, K2 * NP, eps, tmp.data());
      for (std::size_t q = 0; q < z.size(); ++q) z[q] += tmp[q];
    }
    const T inv = T(1) / static_cast<T>(pairs.size());
    for (auto& e : z) e *= inv;
  } else {
    std::vector<const T*> ptrs;
    for (std::size_t s = 0; s < computed.size(); ++s) ptrs.push_back(cached_projection(cache, s).data());
    fuse_kernel<T>(ptrs, K2 * NP, static_cast<T>(fusion_epsilon(computed.size())), z.data());
  }
  Tensor<T> out(Shape{N, K2, geom_.out_h, geom_.out_w});
  channel_major_to_nchw(z.data(), N, K2, P, out.data());
  ensure_finite(out, "dcl fusion");
  return out;
}

template <typename T>
Tensor<T> DclLayer<T>::backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy,
                                std::span<const Param<T>> params, const LayerCache<T>& cache,
                                std::span<Tensor<T>> grads, std::vector<bool>::iterator active) const {
  const std::size_t N = x.dim(0), P = geom_.positions(), NP = N * P, K2 = config_.fused_channels;
  const std::size_t patch = geom_.patch();
  const auto& computed = cache.indices;
  const Tensor<T>& cols = cache.tensors.at(0);

  std::vector<T> dz(K2 * NP);
  nchw_to_channel_major(dy.data(), N, K2, P, dz.data());

  std::vector<const T*> vptr;
  std::vector<std::vector<T>> dv(computed.size(), std::vector<T>(K2 * NP));
  std::vector<T*> dvptr;
  for (std::size_t s = 0; s < computed.size(); ++s) {
    vptr.push_back(cached_projection(cache, s).data());
    dvptr.push_back(dv[s].data());
  }
  fuse_backward_kernel<T>(vptr, K2 * NP, static_cast<T>(fusion_epsilon(computed.size())), dz.data(), dvptr);

  for (std::size_t t = 0; t < config_.branches(); ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      grads[4 * t + j] = Tensor<T>(params[4 * t + j].value.shape());
      active[4 * t + j] = false;
    }
  }

  std::vector<T> dcols(patch * NP, T(0));
  for (std::size_t s = 0; s < computed.size(); ++s) {
    const std::size_t t = computed[s], m = config_.branch_filters[t];
    const Param<T>* p = &params[4 * t];
    const Tensor<T>& y = cached_branch(cache, s);
    const Tensor<T>& v = cached_projection(cache, s);
    std::vector<T>& db = dv[s];  // becomes the gradient at the projection pre-activation
    for (std::size_t q = 0; q < db.size(); ++q)
      if (!(v[q] > T(0))) db[q] = T(0);
    gemm<T>(Trans::No, Trans::Yes, m, K2, NP, T(1), y.data(), db.data(), T(0), grads[4 * t + 2].data());
    row_sums(db.data(), K2, NP, grads[4 * t + 3].data());
    std::vector<T> da(m * NP);
    gemm<T>(Trans::No, Trans::No, m, NP, K2, T(1), p[2].value.data(), db.data(), T(0), da.data());
    for (std::size_t q = 0; q < da.size(); ++q)
      if (!(y[q] > T(0))) da[q] = T(0);
    gemm<T>(Trans::No, Trans::Yes, m, patch, NP, T(1), da.data(), cols.data(), T(0), grads[4 * t].data());
    row_sums(da.data(), m, NP, grads[4 * t + 1].data());
    gemm<T>(Trans::Yes, Trans::No, patch, NP, m, T(1), p[0].value.data(), da.data(), T(1), dcols.data());
    for (std::size_t j = 0; j < 4; ++j) active[4 * t + j] = true;
  }
  Tensor<T> dx(x.shape());
  col2im(dcols.data(), N, geom_, dx.data());
  return dx;
}

template <typename T>
DclState<T> DclLayer<T>::state(std::span<const Param<T>> params) const {
  DclState<T> s;
  s.config = config_;
  s.patch = geom_.patch();
  for (std::size_t t = 0; t < config_.branches(); ++t) {
    const std::size_t m = config_.branch_filters[t];
    s.branch_weights.push_back(params[4 * t].value.reshaped(Shape{m, s.patch}));
    s.branch_bias.push_back(params[4 * t + 1].value);
    s.fusion_weights.push_back(params[4 * t + 2].value);
    s.fusion_bias.push_back(params[4 * t + 3].value);
  }
  return s;
}

template <typename T>
std::vector<Param<T>> DclLayer<T>::params_from(const DclState<T>& state) const {
  Rng unused(0);
  std::vector<Param<T>> p = make_params(unused);
  if (state.config.branch_filters != config_.branch_filters || state.config.fused_channels != config_.fused_channels ||
      state.patch != geom_.patch())
    throw ShapeMismatch(name_ + ": state does not match the block configuration");
  for (std::size_t t = 0; t < config_.branches(); ++t) {
    p[4 * t].value = state.branch_weights[t].reshaped(p[4 * t].value.shape());
    p[4 * t + 1].value = state.branch_bias[t];
    p[4 * t + 2].value = state.fusion_weights[t];
    p[4 * t + 3].value = state.fusion_bias[t];
  }
  return p;
}

template <typename T>
Tensor<T> dcl_forward(const DclState<T>& state, const Shape& input, const Tensor<T>& x, Mode mode, Rng& rng,
                      LayerCache<T>* cache) {
  DclLayer<T> layer("dcl", input, state.config);
  const auto params = layer.params_from(state);
  LayerCache<T> local;
  return layer.forward(x, params, mode, rng, cache ? *cache : local);
}

template <typename T>
PositionResponse<T> respond_at(const DclState<T>& state, std::span<const T> patch) {
  if (patch.size() != state.patch) throw ShapeMismatch("respond_at: patch length differs from the state");
  const std::size_t K2 = state.config.fused_channels;
  PositionResponse<T> r;
  for (std::size_t t = 0; t < state.config.branches(); ++t) {
    const std::size_t m = state.config.branch_filters[t];
    std::vector<T> y(m), proj(K2);
    for (std::size_t i = 0; i < m; ++i) {
      T a = state.branch_bias[t][i];
      for (std::size_t j = 0; j < state.patch; ++j) a += state.branch_weights[t][i * state.patch + j] * patch[j];
      y[i] = a > T(0) ? a : T(0);
    }
    for (std::size_t k = 0; k < K2; ++k) {
      T b = state.fusion_bias[t][k];
      for (std::size_t i = 0; i < m; ++i) b += state.fusion_weights[t][i * K2 + k] * y[i];
      proj[k] = b;
    }
    std::vector<T> v(proj);
    relu_inplace(v);
    r.branch.push_back(std::move(y));
    r.projection.push_back(std::move(proj));
    r.fused_in.push_back(std::move(v));
  }
  r.z = fuse<T>(r.fused_in, static_cast<T>(state.config.epsilon()));
  return r;
}

template <typename T>
Expansion<T> compositional_expand(const DclState<T>& state, std::span<const T> patch, std::size_t k) {
  const std::size_t K2 = state.config.fused_channels, branches = state.config.branches();
  if (k >= K2) throw ShapeMismatch("compositional_expand: filter index out of range");
  const PositionResponse<T> r = respond_at(state, patch);
  bool with_bias = false;
  for (std::size_t t = 0; t < branches; ++t) {
    if (r.projection[t][k] < T(0))
      throw PreconditionViolated("compositional_expand: branch " + std::to_string(t) +
                                 " projection is negative (outside the ReLU linear region)");
    with_bias = with_bias || state.fusion_bias[t][k] != T(0);
  }
  // Per-branch vocabulary: (weight, response) for every filter, plus the bias unit.
  std::vector<std::vector<std::pair<T, T>>> units(branches);
  for (std::size_t t = 0; t < branches; ++t) {
    for (std::size_t m = 0; m < state.config.branch_filters[t]; ++m)
      units[t].emplace_back(state.fusion_weights[t][m * K2 + k], r.branch[t][m]);
    if (with_bias) units[t].emplace_back(state.fusion_bias[t][k], T(1));
  }
  Expansion<T> e;
  std::vector<std::size_t> choice(branches, 0);
  while (true) {
    T w = 1, y = 1;
    for (std::size_t t = 0; t < branches; ++t) {
      w *= units[t][choice[t]].first;
      y *= units[t][choice[t]].second;
    }
    e.value += w * y;
    ++e.terms;
    std::size_t t = 0;
    while (t < branches && ++choice[t] == units[t].size()) choice[t++] = 0;
    if (t == branches) break;
  }
  return e;
}

template <typename T>
BcnnReference<T> make_bcnn_reference(const DclState<T>& state) {
  if (state.config.branches() != 2) throw PreconditionViolated("bilinear reference needs exactly 2 branches");
  const std::size_t K2 = state.config.fused_channels;
  const std::size_t m1 = state.config.branch_filters[0], m2 = state.config.branch_filters[1];
  BcnnReference<T> ref{Tensor<T>(Shape{m1 + 1, m2 + 1, K2})};
  auto w = [&](std::size_t t, std::size_t i, std::size_t k) {
    return i < state.config.branch_filters[t] ? state.fusion_weights[t][i * K2 + k] : state.fusion_bias[t][k];
  };
  for (std::size_t i = 0; i <= m1; ++i)
    for (std::size_t j = 0; j <= m2; ++j)
      for (std::size_t k = 0; k < K2; ++k) ref.U[(i * (m2 + 1) + j) * K2 + k] = w(0, i, k) * w(1, j, k);
  return ref;
}

template <typename T>
BcnnComparison<T> bcnn_equivalence(const DclState<T>& state, std::span<const T> patch, std::size_t k) {
  if (state.config.branches() != 2) throw PreconditionViolated("bcnn_equivalence needs exactly 2 branches");
  const std::size_t K2 = state.config.fused_channels;
  if (k >= K2) throw ShapeMismatch("bcnn_equivalence: filter index out of range");
  const PositionResponse<T> r = respond_at(state, patch);
  for (std::size_t t = 0; t < 2; ++t)
    if (r.projection[t][k] < T(0))
      throw PreconditionViolated("bcnn_equivalence: branch " + std::to_string(t) + " projection is negative");
  const BcnnReference<T> ref = make_bcnn_reference(state);
  const std::size_t m1 = state.config.branch_filters[0], m2 = state.config.branch_filters[1];
  auto y = [&](std::size_t t, std::size_t i) { return i < r.branch[t].size() ? r.branch[t][i] : T(1); };
  BcnnComparison<T> c;
  for (std::size_t i = 0; i <= m1; ++i)
    for (std::size_t j = 0; j <= m2; ++j) c.bilinear += ref.U[(i * (m2 + 1) + j) * K2 + k] * y(0, i) * y(1, j);
  c.dcl_sq = r.z[k] * r.z[k] - static_cast<T>(state.config.epsilon());
  return c;
}

template <typename T>
DclState<T> extract_dcl_state(const Network<T>& net, std::size_t layer) {
  const auto* dl = dynamic_cast<const DclLayer<T>*>(&net.layer(layer));
  if (!dl) throw NoDclBlock("layer " + std::to_string(layer) + " is not a DCL block");
  auto [first, count] = net.param_range(layer);
  return dl->state(std::span<const Param<T>>(net.params()).subspan(first, count));
}

template <typename T>
void store_dcl_state(Network<T>& net, std::size_t layer, const DclState<T>& state) {
  const auto* dl = dynamic_cast<const DclLayer<T>*>(&net.layer(layer));
  if (!dl) throw NoDclBlock("layer " + std::to_string(layer) + " is not a DCL block");
  auto [first, count] = net.param_range(layer);
  auto fresh = dl->params_from(state);
  auto& params = net.mutable_params();
  for (std::size_t i = 0; i < count; ++i) params[first + i].value = std::move(fresh[i].value);
}

#define DCL_INSTANTIATE(T)                                                                                     \
  template std::vector<T> fuse(std::span<const std::vector<T>>, T);                                            \
  template std::vector<std::vector<T>> fuse_backward(std::span<const std::vector<T>>, T, std::span<const T>);  \
  template struct DclState<T>;                                                                                 \
  template class DclLayer<T>;                                                                                  \
  template Tensor<T> dcl_forward(const DclState<T>&, const Shape&, const Tensor<T>&, Mode, Rng&,               \
                                 LayerCache<T>*);                                                              \
  template PositionResponse<T> respond_at(const DclState<T>&, std::span<const T>);                             \
  template Expansion<T> compositional_expand(const DclState<T>&, std::span<const T>, std::size_t);             \
  template BcnnReference<T> make_bcnn_reference(const DclState<T>&);                                           \
  template BcnnComparison<T> bcnn_equivalence(const DclState<T>&, std::span<const T>, std::size_t);            \
  template DclState<T> extract_dcl_state(const Network<T>&, std::size_t);                                      \
  template void store_dcl_state(Network<T>&, std::size_t, const DclState<T>&);

DCL_INSTANTIATE(float)
DCL_INSTANTIATE(double)

#undef DCL_INSTANTIATE

}  // namespace dcl
