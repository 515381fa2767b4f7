#include "stnlab/warp.hpp"

#include <cmath>
#include <numbers>

namespace stnlab {

namespace {

// Source coordinates this close to a lattice point are treated as on it, so
// transforms that map pixels onto pixels (identity, integer shifts, quarter
// turns) copy values exactly despite rounding in the coordinate chain.
constexpr double kLatticeSnap = 1e-9;

struct Axis {
  long i0 = 0;     // left/top tap
  long i1 = 0;     // right/bottom tap
  double f = 0;    // weight of i1
  double active = 1;  // d(clamped coord)/d(coord)
};

Axis resolve(double s, std::size_t n, BoundaryPolicy policy) {
  const double r = std::nearbyint(s);
  if (std::abs(s - r) <= kLatticeSnap) s = r;
  Axis a;
  const long last = static_cast<long>(n) - 1;
  if (policy == BoundaryPolicy::ClampNearest) {
    if (s < 0) {
      s = 0;
      a.active = 0;
    } else if (s > static_cast<double>(last)) {
      s = static_cast<double>(last);
      a.active = 0;
    }
    if (last == 0) {
      a.i0 = a.i1 = 0;
      a.f = 0;
      return a;
    }
    a.i0 = std::min(static_cast<long>(std::floor(s)), last - 1);
    a.i1 = a.i0 + 1;
    a.f = s - static_cast<double>(a.i0);
    return a;
  }
  a.i0 = static_cast<long>(std::floor(s));
  a.i1 = a.i0 + 1;
  a.f = s - static_cast<double>(a.i0);
  return a;
}

template <typename T>
T pixel(const T* plane, long h, long w, long y, long x) {
  if (y < 0 || x < 0 || y >= h || x >= w) return T{0};
  return plane[y * w + x];
}

double denorm(double v, std::size_t n) { return (v + 1.0) * 0.5 * static_cast<double>(n - 1); }

}  // namespace

AffineTransform AffineTransform::rotation(double degrees, Frame f) {
  double c, s;
  const double q = degrees / 90.0;
  if (q == std::nearbyint(q)) {
    static constexpr double kCos[4] = {1, 0, -1, 0};
    static constexpr double kSin[4] = {0, 1, 0, -1};
    const long k = ((static_cast<long>(q) % 4) + 4) % 4;
    c = kCos[k];
    s = kSin[k];
  } else {
    const double rad = degrees * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }
  return {{c, -s, 0, s, c, 0}, f};
}

AffineTransform params_to_matrix(std::span<const double, 6> o, bool identity_offset) {
  AffineTransform t{{o[0], o[1], o[2], o[3], o[4], o[5]}, Frame::GridSpace};
  if (identity_offset) {
    t.m[0] += 1.0;
    t.m[4] += 1.0;
  }
  return t;
}

double normalized_coord(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

SamplingGrid affine_grid(const AffineTransform& t, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw DimensionError("affine_grid: output size must be positive");
  if (t.frame != Frame::GridSpace)
    throw ValueError("affine_grid expects a GridSpace transform; invert the ImageSpace matrix first");
  SamplingGrid g{out_h, out_w, std::vector<double>(2 * out_h * out_w)};
  for (std::size_t i = 0; i < out_h; ++i) {
    const double y = normalized_coord(i, out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double x = normalized_coord(j, out_w);
      const auto p = t.apply(x, y);
      g.xy[2 * (i * out_w + j)] = p[0];
      g.xy[2 * (i * out_w + j) + 1] = p[1];
    }
  }
  return g;
}

template <typename T>
T sample_point(const T* plane, std::size_t h, std::size_t w, double sx, double sy,
               BoundaryPolicy policy) {
  const Axis ax = resolve(sx, w, policy), ay = resolve(sy, h, policy);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  const T fx = static_cast<T>(ax.f), fy = static_cast<T>(ay.f);
  const T top = (T(1) - fx) * pixel(plane, H, W, ay.i0, ax.i0) + fx * pixel(plane, H, W, ay.i0, ax.i1);
  const T bot = (T(1) - fx) * pixel(plane, H, W, ay.i1, ax.i0) + fx * pixel(plane, H, W, ay.i1, ax.i1);
  return (T(1) - fy) * top + fy * bot;
}

template <typename T>
void bilinear_sample(std::span<const T> input, std::size_t c, std::size_t h, std::size_t w,
                     const SamplingGrid& grid, BoundaryPolicy policy, std::span<T> out) {
  const std::size_t npix = grid.h * grid.w;
  if (input.size() != c * h * w || out.size() != c * npix)
    throw DimensionError("bilinear_sample: buffer sizes do not match C x H x W and the grid");
  for (std::size_t p = 0; p < npix; ++p) {
    const double sx = denorm(grid.xy[2 * p], w), sy = denorm(grid.xy[2 * p + 1], h);
    for (std::size_t ch = 0; ch < c; ++ch)
      out[ch * npix + p] = sample_point(input.data() + ch * h * w, h, w, sx, sy, policy);
  }
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplingGrid& grid, BoundaryPolicy policy) {
  if (input.rank() != 3)
    throw DimensionError("bilinear_sample expects C x H x W, got " + shape_str(input.shape()));
  Tensor<T> out({input.dim(0), grid.h, grid.w});
  bilinear_sample<T>(input.values(), input.dim(0), input.dim(1), input.dim(2), grid, policy,
                     out.values());
  return out;
}

template <typename T>
void bilinear_sample_backward(std::span<const T> input, std::size_t c, std::size_t h,
                              std::size_t w, const SamplingGrid& grid, BoundaryPolicy policy,
                              std::span<const T> d_out, std::span<T> d_input,
                              std::span<double> d_grid) {
  const std::size_t npix = grid.h * grid.w;
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  const double kx = 0.5 * static_cast<double>(w - 1), ky = 0.5 * static_cast<double>(h - 1);
  for (std::size_t p = 0; p < npix; ++p) {
    const Axis ax = resolve(denorm(grid.xy[2 * p], w), w, policy);
    const Axis ay = resolve(denorm(grid.xy[2 * p + 1], h), h, policy);
    const double fx = ax.f, fy = ay.f;
    double gx = 0, gy = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = static_cast<double>(d_out[ch * npix + p]);
      if (g == 0) continue;
      const T* plane = input.data() + ch * h * w;
      if (!d_grid.empty()) {
        const double v00 = pixel(plane, H, W, ay.i0, ax.i0), v01 = pixel(plane, H, W, ay.i0, ax.i1);
        const double v10 = pixel(plane, H, W, ay.i1, ax.i0), v11 = pixel(plane, H, W, ay.i1, ax.i1);
        gx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
        gy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
      }
      if (!d_input.empty()) {
        T* dplane = d_input.data() + ch * h * w;
        const long ys[2] = {ay.i0, ay.i1}, xs[2] = {ax.i0, ax.i1};
        const double wy[2] = {1 - fy, fy}, wx[2] = {1 - fx, fx};
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            if (ys[a] < 0 || xs[b] < 0 || ys[a] >= H || xs[b] >= W) continue;
            const double wt = wy[a] * wx[b];
            if (wt != 0) dplane[ys[a] * W + xs[b]] += static_cast<T>(g * wt);
          }
      }
    }
    if (!d_grid.empty()) {
      d_grid[2 * p] += gx * ax.active * kx;
      d_grid[2 * p + 1] += gy * ay.active * ky;
    }
  }
}

std::array<double, 6> grid_grad_to_params(const SamplingGrid& grid, std::span<const double> d_grid) {
  std::array<double, 6> d{};
  for (std::size_t i = 0; i < grid.h; ++i) {
    const double y = normalized_coord(i, grid.h);
    for (std::size_t j = 0; j < grid.w; ++j) {
      const double x = normalized_coord(j, grid.w);
      const double gx = d_grid[2 * (i * grid.w + j)], gy = d_grid[2 * (i * grid.w + j) + 1];
      d[0] += gx * x;
      d[1] += gx * y;
      d[2] += gx;
      d[3] += gy * x;
      d[4] += gy * y;
      d[5] += gy;
    }
  }
  return d;
}

template <typename T>
Tensor<T> spatial_transform(const Tensor<T>& input, std::span<const double, 6> o,
                            const SpatialTransformConfig& cfg) {
  if (input.rank() != 3)
    throw DimensionError("spatial_transform expects C x H x W, got " + shape_str(input.shape()));
  const std::size_t oh = cfg.out_h ? cfg.out_h : input.dim(1);
  const std::size_t ow = cfg.out_w ? cfg.out_w : input.dim(2);
  return bilinear_sample(input, affine_grid(params_to_matrix(o, cfg.identity_offset), oh, ow),
                         cfg.policy);
}

#define STNLAB_INSTANTIATE(T)                                                                     \
  template T sample_point<T>(const T*, std::size_t, std::size_t, double, double, BoundaryPolicy); \
  template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const SamplingGrid&, BoundaryPolicy);    \
  template void bilinear_sample<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,      \
                                   const SamplingGrid&, BoundaryPolicy, std::span<T>);             \
  template void bilinear_sample_backward<T>(std::span<const T>, std::size_t, std::size_t,          \
                                            std::size_t, const SamplingGrid&, BoundaryPolicy,      \
                                            std::span<const T>, std::span<T>, std::span<double>);  \
  template Tensor<T> spatial_transform<T>(const Tensor<T>&, std::span<const double, 6>,            \
                                          const SpatialTransformConfig&);

STNLAB_INSTANTIATE(float)
STNLAB_INSTANTIATE(double)

#undef STNLAB_INSTANTIATE

}  // namespace stnlab
