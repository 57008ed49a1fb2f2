#include "dcl/kernels.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <string>

#include "dcl/parallel.hpp"

namespace dcl {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeMismatch(std::string(op) + ": shapes " + a.str() + " and " + b.str() + " differ");
}

struct Nchw {
  std::size_t n, c, h, w;
};

Nchw as_nchw(const Shape& s, const char* op) {
  if (s.rank() == 3) return {1, s[0], s[1], s[2]};
  if (s.rank() == 4) return {s[0], s[1], s[2], s[3]};
  throw ShapeMismatch(std::string(op) + ": expected CHW or NCHW input, got " + s.str());
}

Shape like_input(const Shape& input, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return input.rank() == 3 ? Shape{c, h, w} : Shape{n, c, h, w};
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b,
          T beta, T* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  MutMap<T> C(c, M, N);
  if (beta == T(0))
    C.setZero();
  else if (beta != T(1))
    C *= beta;
  if (m == 0 || n == 0 || k == 0) return;
  if (ta == Trans::No && tb == Trans::No)
    C.noalias() += alpha * ConstMap<T>(a, M, K) * ConstMap<T>(b, K, N);
  else if (ta == Trans::No)
    C.noalias() += alpha * ConstMap<T>(a, M, K) * ConstMap<T>(b, N, K).transpose();
  else if (tb == Trans::No)
    C.noalias() += alpha * ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, K, N);
  else
    C.noalias() += alpha * ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, N, K).transpose();
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("matmul: operands must be rank 2");
  if (a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: inner dimensions differ (" + a.shape().str() + " x " + b.shape().str() + ")");
  Tensor<T> out(Shape{a.dim(0), b.dim(1)});
  gemm<T>(Trans::No, Trans::No, a.dim(0), b.dim(1), a.dim(1), T(1), a.data(), b.data(), T(0), out.data());
  ensure_finite(out, "matmul");
  return out;
}

ConvGeometry ConvGeometry::make(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel_h,
                                std::size_t kernel_w, std::size_t stride, std::size_t pad) {
  if (stride == 0 || kernel_h == 0 || kernel_w == 0) throw ShapeMismatch("conv: kernel and stride must be >= 1");
  const std::size_t ph = height + 2 * pad, pw = width + 2 * pad;
  if (ph < kernel_h || pw < kernel_w)
    throw ShapeMismatch("conv: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                        " larger than padded input " + std::to_string(ph) + "x" + std::to_string(pw));
  if ((ph - kernel_h) % stride != 0 || (pw - kernel_w) % stride != 0)
    throw NonIntegralOutput("conv: stride " + std::to_string(stride) + " does not tile padded input " +
                            std::to_string(ph) + "x" + std::to_string(pw));
  ConvGeometry g;
  g.channels = channels;
  g.height = height;
  g.width = width;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (ph - kernel_h) / stride + 1;
  g.out_w = (pw - kernel_w) / stride + 1;
  return g;
}

template <typename T>
void im2col(const T* x, std::size_t batch, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions(), row_len = batch * P;
  parallel_for(batch, [&](std::size_t n) {
    const T* xn = x + n * g.channels * g.height * g.width;
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t i = 0; i < g.kernel_h; ++i) {
        for (std::size_t j = 0; j < g.kernel_w; ++j) {
          const std::size_t r = (c * g.kernel_h + i) * g.kernel_w + j;
          T* dst = cols + r * row_len + n * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            T* drow = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<long>(g.height)) {
              std::fill(drow, drow + g.out_w, T(0));
              continue;
            }
            const T* srow = xn + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0) : srow[ix];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* dx) {
  const std::size_t P = g.positions(), row_len = batch * P;
  parallel_for(batch, [&](std::size_t n) {
    T* xn = dx + n * g.channels * g.height * g.width;
    std::fill(xn, xn + g.channels * g.height * g.width, T(0));
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t i = 0; i < g.kernel_h; ++i) {
        for (std::size_t j = 0; j < g.kernel_w; ++j) {
          const std::size_t r = (c * g.kernel_h + i) * g.kernel_w + j;
          const T* src = cols + r * row_len + n * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            T* xrow = xn + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.width)) xrow[ix] += src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void nchw_to_channel_major(const T* x, std::size_t batch, std::size_t channels, std::size_t positions, T* out) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      std::memcpy(out + c * batch * positions + n * positions, x + (n * channels + c) * positions,
                  positions * sizeof(T));
}

template <typename T>
void channel_major_to_nchw(const T* x, std::size_t batch, std::size_t channels, std::size_t positions, T* out) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      std::memcpy(out + (n * channels + c) * positions, x + c * batch * positions + n * positions,
                  positions * sizeof(T));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  const Nchw in = as_nchw(input.shape(), "conv2d");
  if (weights.rank() != 4) throw ShapeMismatch("conv2d: weights must be OIHW");
  if (weights.dim(1) != in.c)
    throw ShapeMismatch("conv2d: weights expect " + std::to_string(weights.dim(1)) + " input channels, got " +
                        std::to_string(in.c));
  const std::size_t out_c = weights.dim(0);
  if (bias.size() != out_c) throw ShapeMismatch("conv2d: bias length must equal output channels");
  const auto g = ConvGeometry::make(in.c, in.h, in.w, weights.dim(2), weights.dim(3), stride, pad);
  const std::size_t P = g.positions(), NP = in.n * P;

  std::vector<T> cols(g.patch() * NP);
  im2col(input.data(), in.n, g, cols.data());
  std::vector<T> out_cm(out_c * NP);
  gemm<T>(Trans::No, Trans::No, out_c, NP, g.patch(), T(1), weights.data(), cols.data(), T(0), out_cm.data());
  for (std::size_t o = 0; o < out_c; ++o) {
    T* row = out_cm.data() + o * NP;
    for (std::size_t q = 0; q < NP; ++q) row[q] += bias[o];
  }
  Tensor<T> out(like_input(input.shape(), in.n, out_c, g.out_h, g.out_w));
  channel_major_to_nchw(out_cm.data(), in.n, out_c, P, out.data());
  ensure_finite(out, "conv2d");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& dout,
                             std::size_t stride, std::size_t pad) {
  const Nchw in = as_nchw(input.shape(), "conv2d_backward");
  const auto g = ConvGeometry::make(in.c, in.h, in.w, weights.dim(2), weights.dim(3), stride, pad);
  const std::size_t out_c = weights.dim(0), P = g.positions(), NP = in.n * P;
  if (dout.size() != out_c * NP) throw ShapeMismatch("conv2d_backward: upstream gradient has wrong size");

  std::vector<T> cols(g.patch() * NP);
  im2col(input.data(), in.n, g, cols.data());
  std::vector<T> dout_cm(out_c * NP);
  nchw_to_channel_major(dout.data(), in.n, out_c, P, dout_cm.data());

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>(Shape{out_c})};
  gemm<T>(Trans::No, Trans::Yes, out_c, g.patch(), NP, T(1), dout_cm.data(), cols.data(), T(0),
          grads.weights.data());
  for (std::size_t o = 0; o < out_c; ++o) {
    T s = 0;
    for (std::size_t q = 0; q < NP; ++q) s += dout_cm[o * NP + q];
    grads.bias[o] = s;
  }
  std::vector<T> dcols(g.patch() * NP);
  gemm<T>(Trans::Yes, Trans::No, g.patch(), NP, out_c, T(1), weights.data(), dout_cm.data(), T(0), dcols.data());
  col2im(dcols.data(), in.n, g, grads.input.data());
  return grads;
}

PoolGeometry PoolGeometry::make(std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ShapeMismatch("maxpool: kernel and stride must be >= 1");
  if (height < kernel || width < kernel)
    throw ShapeMismatch("maxpool: kernel " + std::to_string(kernel) + " larger than input " +
                        std::to_string(height) + "x" + std::to_string(width));
  PoolGeometry g;
  g.height = height;
  g.width = width;
  g.kernel = kernel;
  g.stride = stride;
  // overhanging last windows are kept, but every window must start inside
  g.out_h = std::min((height - kernel + stride - 1) / stride + 1, (height - 1) / stride + 1);
  g.out_w = std::min((width - kernel + stride - 1) / stride + 1, (width - 1) / stride + 1);
  return g;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride) {
  const Nchw in = as_nchw(input.shape(), "maxpool2d");
  const auto g = PoolGeometry::make(in.h, in.w, kernel, stride);
  PoolResult<T> res{Tensor<T>(like_input(input.shape(), in.n, in.c, g.out_h, g.out_w)), {}};
  res.argmax.resize(res.output.size());
  const std::size_t planes = in.n * in.c, plane_in = in.h * in.w, plane_out = g.out_h * g.out_w;
  parallel_for(planes, [&](std::size_t pl) {
    const T* src = input.data() + pl * plane_in;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const std::size_t y0 = oy * stride, y1 = std::min(y0 + kernel, in.h);
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::size_t x0 = ox * stride, x1 = std::min(x0 + kernel, in.w);
        std::size_t best = y0 * in.w + x0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x)
            if (src[y * in.w + x] > src[best]) best = y * in.w + x;
        const std::size_t o = pl * plane_out + oy * g.out_w + ox;
        res.output[o] = src[best];
        res.argmax[o] = pl * plane_in + best;
      }
    }
  });
  return res;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dout, std::span<const std::size_t> argmax, const Shape& input_shape) {
  if (argmax.size() != dout.size()) throw ShapeMismatch("maxpool2d_backward: argmax/gradient size mismatch");
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dout[i];
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  ensure_finite(out, "mul");
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  ensure_finite(out, "add");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  ensure_finite(out, "scale");
  return out;
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::pow(a[i], exponent);
  ensure_finite(out, "pow");
  return out;
}

#define DCL_INSTANTIATE(T)                                                                                        \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, T, const T*, const T*, T, T*);        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template void im2col(const T*, std::size_t, const ConvGeometry&, T*);                                            \
  template void col2im(const T*, std::size_t, const ConvGeometry&, T*);                                            \
  template void nchw_to_channel_major(const T*, std::size_t, std::size_t, std::size_t, T*);                        \
  template void channel_major_to_nchw(const T*, std::size_t, std::size_t, std::size_t, T*);                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);       \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                        std::size_t);                                                              \
  template PoolResult<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);                                    \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, std::span<const std::size_t>, const Shape&);             \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                   \
  template Tensor<T> pow(const Tensor<T>&, T);

DCL_INSTANTIATE(float)
DCL_INSTANTIATE(double)

#undef DCL_INSTANTIATE

}  // namespace dcl
