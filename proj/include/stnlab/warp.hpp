#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "stnlab/tensor.hpp"

namespace stnlab {

/// Which way a 2x3 matrix acts. A GridSpace matrix maps output (sampling)
/// coordinates to source coordinates, which is what a spatial transformer
/// predicts; the ImageSpace matrix moving the image content is its inverse.
enum class Frame { GridSpace, ImageSpace };

enum class BoundaryPolicy {
  ClampNearest,  // out-of-range reads return the closest edge pixel
  ZeroFill,      // out-of-range pixels read as 0
};

/// 2x3 affine matrix [a11 a12 a13; a21 a22 a23] with an implicit [0 0 1] row.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};
  Frame frame = Frame::GridSpace;

  static AffineTransform identity(Frame f = Frame::GridSpace) { return {{1, 0, 0, 0, 1, 0}, f}; }
  /// R(phi) = [cos -sin; sin cos]; multiples of 90 degrees are exact.
  static AffineTransform rotation(double degrees, Frame f = Frame::GridSpace);
  static AffineTransform scaling(double sx, double sy, Frame f = Frame::GridSpace) {
    return {{sx, 0, 0, 0, sy, 0}, f};
  }
  static AffineTransform translation(double tx, double ty, Frame f = Frame::GridSpace) {
    return {{1, 0, tx, 0, 1, ty}, f};
  }

  double a11() const { return m[0]; }
  double a12() const { return m[1]; }
  double a13() const { return m[2]; }
  double a21() const { return m[3]; }
  double a22() const { return m[4]; }
  double a23() const { return m[5]; }
  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  std::array<double, 2> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

/// Localization output to matrix. With `identity_offset` the diagonal entries
/// are o1+1 and o5+1 so an all-zero output is the identity.
AffineTransform params_to_matrix(std::span<const double, 6> o, bool identity_offset);

/// Normalized source coordinates, interleaved (x, y), one pair per output
/// pixel in row-major order.
struct SamplingGrid {
  std::size_t h = 0, w = 0;
  std::vector<double> xy;
};

/// Edge-aligned normalized coordinate of index `i` along an axis of `n`
/// pixels: -1 at the first pixel, +1 at the last, 0 when n == 1.
double normalized_coord(std::size_t i, std::size_t n);

/// Grid for a GridSpace transform: pixel (i, j) carries t * (x_j, y_i, 1).
SamplingGrid affine_grid(const AffineTransform& t, std::size_t out_h, std::size_t out_w);

/// Bilinear read of one plane at source pixel coordinates (sx, sy).
template <typename T>
T sample_point(const T* plane, std::size_t h, std::size_t w, double sx, double sy,
               BoundaryPolicy policy);

/// Bilinear resampling of a C x H x W tensor on `grid` (all channels share it).
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplingGrid& grid, BoundaryPolicy policy);

/// Span form used by the autodiff graph; `out` has C * grid.h * grid.w values.
template <typename T>
void bilinear_sample(std::span<const T> input, std::size_t c, std::size_t h, std::size_t w,
                     const SamplingGrid& grid, BoundaryPolicy policy, std::span<T> out);

/// Accumulates gradients of a bilinear_sample. `d_input` (C*H*W) and
/// `d_grid` (2 per grid point, w.r.t. normalized coordinates) may be empty.
template <typename T>
void bilinear_sample_backward(std::span<const T> input, std::size_t c, std::size_t h,
                              std::size_t w, const SamplingGrid& grid, BoundaryPolicy policy,
                              std::span<const T> d_out, std::span<T> d_input,
                              std::span<double> d_grid);

/// Chain rule from grid gradients to the six GridSpace matrix entries.
std::array<double, 6> grid_grad_to_params(const SamplingGrid& grid, std::span<const double> d_grid);

struct SpatialTransformConfig {
  std::size_t out_h = 0;  // 0 keeps the input size
  std::size_t out_w = 0;
  BoundaryPolicy policy = BoundaryPolicy::ClampNearest;
  bool identity_offset = false;
};

/// params_to_matrix + affine_grid + bilinear_sample on a C x H x W tensor.
template <typename T>
Tensor<T> spatial_transform(const Tensor<T>& input, std::span<const double, 6> o,
                            const SpatialTransformConfig& cfg);

}  // namespace stnlab
