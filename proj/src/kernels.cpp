#include "stnlab/kernels.hpp"

#include <algorithm>
#include <vector>

namespace stnlab::kernels {

namespace {

// Upper bound on im2col buffer elements; images are processed in chunks so
// large inputs (112x112 canvases) never materialize a full-batch buffer.
constexpr std::size_t kColsBudget = std::size_t{1} << 22;
constexpr std::size_t kBlock = 512;

std::size_t chunk_images(const ConvGeometry& g) {
  const std::size_t per_image = g.kdim() * g.out_h() * g.out_w();
  return std::max<std::size_t>(1, std::min(g.n, kColsBudget / std::max<std::size_t>(1, per_image)));
}

// cols[k][p], k = (c, ky, kx), p = (image in chunk, y, x)
template <typename T>
void im2col(const ConvGeometry& g, const T* in, std::size_t n0, std::size_t nc, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  const std::size_t p_total = nc * plane;
  std::size_t k = 0;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
        T* row = cols + k * p_total;
        for (std::size_t i = 0; i < nc; ++i) {
          const T* src = in + ((n0 + i) * g.c + c) * g.h * g.w;
          T* dst = row + i * plane;
          for (std::size_t y = 0; y < oh; ++y) {
            const T* s = src + (y + ky) * g.w + kx;
            std::copy(s, s + ow, dst + y * ow);
          }
        }
      }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, std::size_t n0, std::size_t nc, T* d_in) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  const std::size_t p_total = nc * plane;
  std::size_t k = 0;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
        const T* row = cols + k * p_total;
        for (std::size_t i = 0; i < nc; ++i) {
          T* dst = d_in + ((n0 + i) * g.c + c) * g.h * g.w;
          const T* src = row + i * plane;
          for (std::size_t y = 0; y < oh; ++y) {
            T* d = dst + (y + ky) * g.w + kx;
            const T* s = src + y * ow;
            for (std::size_t x = 0; x < ow; ++x) d[x] += s[x];
          }
        }
      }
}

}  // namespace

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  T s = 0;
  for (std::size_t l = 0; l < 8; ++l) s += lanes[l];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel,
                    std::span<const T> bias, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, kd = g.kdim();
  const std::size_t step = chunk_images(g);
  std::vector<T> cols(kd * step * plane);
  std::vector<T> acc(g.o * step * plane);
  for (std::size_t n0 = 0; n0 < g.n; n0 += step) {
    const std::size_t nc = std::min(step, g.n - n0);
    const std::size_t pt = nc * plane;
    im2col(g, in.data(), n0, nc, cols.data());
    for (std::size_t o = 0; o < g.o; ++o)
      std::fill_n(acc.data() + o * pt, pt, bias.empty() ? T{0} : bias[o]);
    for (std::size_t pb = 0; pb < pt; pb += kBlock) {
      const std::size_t pe = std::min(pt, pb + kBlock);
      for (std::size_t o = 0; o < g.o; ++o) {
        T* row = acc.data() + o * pt;
        const T* wrow = kernel.data() + o * kd;
        for (std::size_t k = 0; k < kd; ++k) {
          const T wk = wrow[k];
          const T* crow = cols.data() + k * pt;
          for (std::size_t p = pb; p < pe; ++p) row[p] += wk * crow[p];
        }
      }
    }
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t o = 0; o < g.o; ++o)
        std::copy_n(acc.data() + o * pt + i * plane, plane,
                    out.data() + ((n0 + i) * g.o + o) * plane);
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel,
                     std::span<const T> d_out, std::span<T> d_in, std::span<T> d_kernel,
                     std::span<T> d_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, kd = g.kdim();
  const std::size_t step = chunk_images(g);
  const bool need_cols = !d_kernel.empty();
  std::vector<T> cols(need_cols ? kd * step * plane : 0);
  std::vector<T> gout(g.o * step * plane);
  std::vector<T> dcols(d_in.empty() ? 0 : kd * step * plane);
  for (std::size_t n0 = 0; n0 < g.n; n0 += step) {
    const std::size_t nc = std::min(step, g.n - n0);
    const std::size_t pt = nc * plane;
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t o = 0; o < g.o; ++o)
        std::copy_n(d_out.data() + ((n0 + i) * g.o + o) * plane, plane,
                    gout.data() + o * pt + i * plane);
    if (!d_bias.empty()) {
      for (std::size_t o = 0; o < g.o; ++o) {
        const T* grow = gout.data() + o * pt;
        T lanes[8] = {};
        std::size_t p = 0;
        for (; p + 8 <= pt; p += 8)
          for (std::size_t l = 0; l < 8; ++l) lanes[l] += grow[p + l];
        T s = 0;
        for (std::size_t l = 0; l < 8; ++l) s += lanes[l];
        for (; p < pt; ++p) s += grow[p];
        d_bias[o] += s;
      }
    }
    if (need_cols) {
      im2col(g, in.data(), n0, nc, cols.data());
      for (std::size_t o = 0; o < g.o; ++o) {
        const T* grow = gout.data() + o * pt;
        T* dk = d_kernel.data() + o * kd;
        for (std::size_t k = 0; k < kd; ++k) dk[k] += dot(grow, cols.data() + k * pt, pt);
      }
    }
    if (!d_in.empty()) {
      std::fill(dcols.begin(), dcols.begin() + kd * pt, T{0});
      for (std::size_t pb = 0; pb < pt; pb += kBlock) {
        const std::size_t pe = std::min(pt, pb + kBlock);
        for (std::size_t k = 0; k < kd; ++k) {
          T* drow = dcols.data() + k * pt;
          for (std::size_t o = 0; o < g.o; ++o) {
            const T wk = kernel[o * kd + k];
            const T* grow = gout.data() + o * pt;
            for (std::size_t p = pb; p < pe; ++p) drow[p] += wk * grow[p];
          }
        }
      }
      col2im_add(g, dcols.data(), n0, nc, d_in.data());
    }
  }
}

template <typename T>
void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> in,
                        std::span<T> out, std::span<std::uint32_t> argmax) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t i00 = base + 2 * y * w + 2 * x;
        const std::size_t cand[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
        std::size_t best = cand[0];
        for (int j = 1; j < 4; ++j)
          if (in[cand[j]] > in[best]) best = cand[j];
        const std::size_t oi = (pl * oh + y) * ow + x;
        out[oi] = in[best];
        argmax[oi] = static_cast<std::uint32_t>(best);
      }
  }
}

template <typename T>
void maxpool2x2_backward(std::span<const std::uint32_t> argmax, std::span<const T> d_out,
                         std::span<T> d_in) {
  for (std::size_t i = 0; i < argmax.size(); ++i) d_in[argmax[i]] += d_out[i];
}

template <typename T>
void avgpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> in,
                        std::span<T> out) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = in.data() + pl * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const T* a = src + 2 * y * w + 2 * x;
        out[(pl * oh + y) * ow + x] = T(0.25) * (a[0] + a[1] + a[w] + a[w + 1]);
      }
  }
}

template <typename T>
void avgpool2x2_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> d_out,
                         std::span<T> d_in) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    T* dst = d_in.data() + pl * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const T g = T(0.25) * d_out[(pl * oh + y) * ow + x];
        T* a = dst + 2 * y * w + 2 * x;
        a[0] += g;
        a[1] += g;
        a[w] += g;
        a[w + 1] += g;
      }
  }
}

template <typename T>
void fc_forward(std::size_t n, std::size_t d, std::size_t m, std::span<const T> in,
                std::span<const T> weight, std::span<const T> bias, std::span<T> out) {
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * m;
    if (bias.empty())
      std::fill_n(row, m, T{0});
    else
      std::copy_n(bias.data(), m, row);
    const T* x = in.data() + i * d;
    for (std::size_t k = 0; k < d; ++k) {
      const T xk = x[k];
      const T* wrow = weight.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += xk * wrow[j];
    }
  }
}

template <typename T>
void fc_backward(std::size_t n, std::size_t d, std::size_t m, std::span<const T> in,
                 std::span<const T> weight, std::span<const T> d_out, std::span<T> d_in,
                 std::span<T> d_weight, std::span<T> d_bias) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* g = d_out.data() + i * m;
    const T* x = in.data() + i * d;
    if (!d_bias.empty())
      for (std::size_t j = 0; j < m; ++j) d_bias[j] += g[j];
    if (!d_weight.empty())
      for (std::size_t k = 0; k < d; ++k) {
        const T xk = x[k];
        T* dw = d_weight.data() + k * m;
        for (std::size_t j = 0; j < m; ++j) dw[j] += xk * g[j];
      }
    if (!d_in.empty())
      for (std::size_t k = 0; k < d; ++k) d_in[i * d + k] += dot(weight.data() + k * m, g, m);
  }
}

#define STNLAB_INSTANTIATE(T)                                                                    \
  template T dot<T>(const T*, const T*, std::size_t);                                            \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,   \
                                  std::span<const T>, std::span<T>);                             \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,  \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>); \
  template void maxpool2x2_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, \
                                      std::span<T>, std::span<std::uint32_t>);                   \
  template void maxpool2x2_backward<T>(std::span<const std::uint32_t>, std::span<const T>,       \
                                       std::span<T>);                                            \
  template void avgpool2x2_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, \
                                      std::span<T>);                                             \
  template void avgpool2x2_backward<T>(std::size_t, std::size_t, std::size_t,                    \
                                       std::span<const T>, std::span<T>);                        \
  template void fc_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,         \
                              std::span<const T>, std::span<const T>, std::span<T>);             \
  template void fc_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,        \
                               std::span<const T>, std::span<const T>, std::span<T>,             \
                               std::span<T>, std::span<T>);

STNLAB_INSTANTIATE(float)
STNLAB_INSTANTIATE(double)

#undef STNLAB_INSTANTIATE

}  // namespace stnlab::kernels
