#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stnlab/tensor.hpp"
#include "stnlab/warp.hpp"

namespace stnlab {

enum class GroupKind { TranslationInt, Rotation, UniformScale, GeneralAffine };

std::string_view group_kind_name(GroupKind k);
GroupKind parse_group_kind(std::string_view s);

/// An image transformation h. Rotations and scalings act about the image
/// center; `image_matrix` gives the pixel-coordinate map T_h in ImageSpace
/// (content at u moves to T_h u).
struct TransformGroupElement {
  GroupKind kind = GroupKind::TranslationInt;
  long dx = 0, dy = 0;
  double degrees = 0;
  double scale = 1;
  AffineTransform matrix;  // GeneralAffine only (pixel coordinates, ImageSpace)

  static TransformGroupElement translation(long dx, long dy);
  static TransformGroupElement rotation(double degrees);
  static TransformGroupElement uniform_scale(double s);
  static TransformGroupElement general(const AffineTransform& image_space_pixels);

  AffineTransform image_matrix(std::size_t h, std::size_t w) const;
  /// Size of the transformation for reports (pixels, degrees or factor).
  double magnitude() const;
};

/// A fixed convolutional feature extractor evaluated at 64-bit.
struct ExtractorLayer {
  enum class Kind { Conv, Relu, MaxPool } kind = Kind::Conv;
  Tensor<double> kernel;     // O x C x K x K
  std::vector<double> bias;  // empty = no bias
};

struct ReceptiveField {
  std::size_t support = 1;  // side of the square input region per feature
  std::size_t stride = 1;   // input pixels between neighboring features
};

struct FeatureExtractor {
  std::size_t in_channels = 1;
  std::vector<ExtractorLayer> layers;

  ReceptiveField receptive_field() const;
  std::size_t out_channels() const;
  /// C x H x W image -> K x H' x W' feature maps.
  Tensor<double> apply(const Tensor<double>& image) const;
};

/// Random conv-relu-pool-conv-relu stack with uniform(-1, 1) weights.
FeatureExtractor random_extractor(std::uint64_t seed, std::size_t channels = 4, std::size_t kernel = 3);

/// Two channels W and M with M(x) = W(T_180 x): integer weights, no bias, one
/// linear layer, so channel swapping under a half turn is exact.
FeatureExtractor mirrored_pair_extractor(std::size_t kernel = 5, std::uint64_t seed = 1);

/// Sampled isotropic Gaussian filters, one channel per sigma; each filter is
/// invariant under the lattice rotations by construction.
FeatureExtractor isotropic_extractor(const std::vector<double>& sigmas, std::size_t kernel = 0);

/// Integer-valued random image in {0..levels-1}.
Tensor<double> random_integer_image(std::uint64_t seed, std::size_t h, std::size_t w, int levels = 16);
/// Smooth image: sum of Gaussian blobs with the given width.
Tensor<double> blob_image(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t blobs = 12,
                          double sigma = 4.0);

/// T_h f: resample `image` so content at u moves to T_h u (zero outside).
Tensor<double> transform_image(const Tensor<double>& image, const AffineTransform& image_space_pixels);

struct AuditReport {
  double residual_same = 0;   // normalized mean |aligned - original|, channel to itself
  double residual_perm = 0;   // same with the best (or given) channel permutation
  std::vector<std::size_t> permutation;  // permutation[i] = channel of the transformed features matched to i
  std::vector<std::vector<double>> pair_residual;  // [i][j]: original channel i vs transformed channel j
  std::size_t interior = 0;   // feature positions compared
  double nominal_margin = 0;  // rf radius + ceil(max displacement) + 2, in image pixels
  double norm = 0;            // mean |features| over the interior
};

/// Aligns the features of T_h f back with T_h^-1 and compares against the
/// features of f on interior positions whose every contributing pixel was
/// sampled from inside the original image.
AuditReport alignment_residual(const FeatureExtractor& ex, const Tensor<double>& image,
                               const TransformGroupElement& h,
                               const std::optional<std::vector<std::size_t>>& permutation = std::nullopt);

/// Same, but the transformed features are aligned with a candidate
/// image-space map g instead of h^-1.
AuditReport alignment_residual_with(const FeatureExtractor& ex, const Tensor<double>& image,
                                    const AffineTransform& h_pixels, const AffineTransform& g_pixels,
                                    const std::optional<std::vector<std::size_t>>& permutation = std::nullopt);

/// |Omega ∩ L^-1 Omega| / |Omega| for a square support centered on the
/// aligned point, where L is the linear part of h.
double receptive_field_overlap(const TransformGroupElement& h, double support);

struct NecessityRow {
  std::string label;
  AffineTransform candidate;
  double residual_same = 0;
  double residual_perm = 0;
};

/// Residual of aligning with each candidate g; sorted ascending by
/// residual_same (ties keep input order).
std::vector<NecessityRow> necessity_check(const FeatureExtractor& ex, const Tensor<double>& image,
                                          const TransformGroupElement& h,
                                          const std::vector<std::pair<std::string, AffineTransform>>& candidates);

}  // namespace stnlab
