#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "stnlab/warp.hpp"

namespace stnlab {

/// Homogeneous product a * b (apply b first). Frames must match.
AffineTransform compose(const AffineTransform& a, const AffineTransform& b);

/// Inverse matrix with the frame flipped. Throws SingularMatrixError when
/// |det| <= 1e-12.
AffineTransform invert(const AffineTransform& a);

/// Least-squares similarity S * R(phi) closest (Frobenius) to the 2x2 part.
struct SimilarityFit {
  double scale = 1;   // S = sqrt(u^2 + v^2)
  double degrees = 0; // phi in (-180, 180]
  double u = 1, v = 0;  // S cos(phi), S sin(phi)
};

SimilarityFit fit_similarity(const AffineTransform& a);

/// Image-space rotation in degrees; GridSpace matrices are sign-flipped.
double rotation_of(const AffineTransform& a);
/// Image-space log2 of the determinant; GridSpace matrices are sign-flipped.
double scale_of(const AffineTransform& a);
/// Translation in pixels (x right, y down). GridSpace: m * (a13, a23).
/// ImageSpace: -m * B^-1 (b13, b23), i.e. the translation of the inverse.
std::array<double, 2> translation_of(const AffineTransform& a, double m);

/// Where an ST sits: width of the tensor it warps and the cumulative stride
/// of the layers before it.
struct PixelScaleContext {
  std::size_t width_at_st = 0;
  std::size_t cumulative_stride = 1;
};

/// m = (width_at_st - 1) / 2 * cumulative_stride.
double effective_pixel_scale(const PixelScaleContext& ctx);

enum class PoseKind { Rotation, Translation, Scale };

std::string_view pose_kind_name(PoseKind k);
PoseKind parse_pose_kind(std::string_view s);

/// One evaluated sample. 1-D kinds use only component 0 of theta/theta_prime.
struct PoseRecord {
  int label = 0;
  PoseKind kind = PoseKind::Rotation;
  std::array<double, 2> theta{0, 0};
  std::array<double, 2> theta_prime{0, 0};
};

/// theta' of a predicted GridSpace matrix in the units of `kind`. `m` is only
/// used for translations.
std::array<double, 2> compensation_of(PoseKind kind, const AffineTransform& grid_matrix, double m);

struct PoseSummary {
  PoseKind kind = PoseKind::Rotation;
  std::map<int, double> per_label;  // std (1-D) or standard distance deviation
  double average = 0;               // unweighted mean over labels
};

/// Spread of the final pose theta + theta' per label, averaged over labels.
/// Population (1/n) statistics throughout.
PoseSummary pose_summary(std::span<const PoseRecord> records);

/// Mean of the per-seed averages.
double seed_average(std::span<const PoseSummary> per_seed);

/// Total-least-squares line. For a vertical principal axis `vertical` is set,
/// `slope` is +infinity and `intercept` holds the x position of the line.
struct LineFit {
  double slope = 0;
  double intercept = 0;
  bool vertical = false;
};

LineFit orthogonal_regression(std::span<const std::array<double, 2>> points);

}  // namespace stnlab
