#pragma once

// Re-entrant numeric kernels behind the autodiff graph. All functions are
// pure over their arguments; outputs are written to caller-provided spans.
// Every reduction runs in a fixed order so results are bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <span>

namespace stnlab::kernels {

/// Geometry of a valid (unpadded), stride-1 2-D convolution over NCHW data.
struct ConvGeometry {
  std::size_t n = 0, c = 0, h = 0, w = 0;  // input
  std::size_t o = 0, kh = 0, kw = 0;       // kernel
  std::size_t out_h() const { return h - kh + 1; }
  std::size_t out_w() const { return w - kw + 1; }
  std::size_t kdim() const { return c * kh * kw; }
};

/// out[n,o,y,x] = bias[o] + sum over (c, ky, kx) in ascending order of
/// kernel[o,c,ky,kx] * in[n,c,y+ky,x+kx]. `bias` may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel,
                    std::span<const T> bias, std::span<T> out);

/// Accumulates (+=) gradients for a conv2d. Any of `d_in`, `d_kernel`, `d_bias`
/// may be empty to skip that gradient.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel,
                     std::span<const T> d_out, std::span<T> d_in, std::span<T> d_kernel,
                     std::span<T> d_bias);

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// `argmax` receives the flat input index chosen for each output; ties go to
/// the first element of the window in row-major order.
template <typename T>
void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> in,
                        std::span<T> out, std::span<std::uint32_t> argmax);

template <typename T>
void maxpool2x2_backward(std::span<const std::uint32_t> argmax, std::span<const T> d_out,
                         std::span<T> d_in);

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
void avgpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> in,
                        std::span<T> out);

template <typename T>
void avgpool2x2_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> d_out,
                         std::span<T> d_in);

/// out[n,m] = bias[m] + sum_d in[n,d] * weight[d,m]  (weight is D x M).
template <typename T>
void fc_forward(std::size_t n, std::size_t d, std::size_t m, std::span<const T> in,
                std::span<const T> weight, std::span<const T> bias, std::span<T> out);

template <typename T>
void fc_backward(std::size_t n, std::size_t d, std::size_t m, std::span<const T> in,
                 std::span<const T> weight, std::span<const T> d_out, std::span<T> d_in,
                 std::span<T> d_weight, std::span<T> d_bias);

/// Dot product with eight fixed accumulation lanes (vectorizes without
/// reassociating across calls).
template <typename T>
T dot(const T* a, const T* b, std::size_t n);

}  // namespace stnlab::kernels
