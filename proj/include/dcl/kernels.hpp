#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcl/tensor.hpp"

namespace dcl {

enum class Trans { No, Yes };

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) m x k and op(B) k x n.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b,
          T beta, T* c);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Geometry of one convolution. Output extents are (H + 2 pad - k) / stride + 1 and
// must divide exactly.
struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;

  static ConvGeometry make(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel_h,
                           std::size_t kernel_w, std::size_t stride, std::size_t pad);
  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

// Lowers a NCHW batch to a patch() x (batch * positions()) row-major matrix.
template <typename T>
void im2col(const T* x, std::size_t batch, const ConvGeometry& g, T* cols);
// Adjoint of im2col: scatters column gradients back into a zeroed NCHW buffer.
template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* dx);

// NCHW (C channels, P positions per sample) <-> C x (N * P) channel-major.
template <typename T>
void nchw_to_channel_major(const T* x, std::size_t batch, std::size_t channels, std::size_t positions, T* out);
template <typename T>
void channel_major_to_nchw(const T* x, std::size_t batch, std::size_t channels, std::size_t positions, T* out);

// Cross-correlation plus per-output-channel bias. Input is CHW or NCHW,
// weights OIHW, bias O. Output keeps the input's rank.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

template <typename T>
struct ConvGrads {
  Tensor<T> input, weights, bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& dout,
                             std::size_t stride, std::size_t pad);

// Max pooling with ceil-mode extents: ceil((H - k) / s) + 1 windows per axis,
// the last one truncated at the border. Ties go to the lowest linear index.
struct PoolGeometry {
  std::size_t height = 0, width = 0, kernel = 0, stride = 1, out_h = 0, out_w = 0;
  static PoolGeometry make(std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride);
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // linear input index per output element
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dout, std::span<const std::size_t> argmax, const Shape& input_shape);

// Element-wise maps. Operand shapes must match exactly.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent);

}  // namespace dcl
