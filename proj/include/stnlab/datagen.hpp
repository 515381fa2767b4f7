#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stnlab/tensor.hpp"

namespace stnlab {

enum class Variant : std::uint16_t { Plain = 0, R = 1, T = 2, S = 3 };

std::string_view variant_name(Variant v);
/// Accepts "plain", "R"/"r"/"rotation", "T"/"t"/"translation", "S"/"s"/"scale".
Variant parse_variant(std::string_view s);

struct Normalization {
  bool applied = false;
  double mean = 0;
  double std = 1;
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// One 6x6 clutter square pasted into a (T) or (S) canvas.
struct ClutterFragment {
  std::uint32_t source_index = 0;  // image the square was cut from
  int src_x = 0, src_y = 0;        // top-left of the square in that image
  int dst_x = 0, dst_y = 0;        // top-left of the pasted area on the canvas
  int extent = 6;                  // side of the pasted area in canvas pixels
  double scale = 1;
};

/// Images (N x 1 x H x W), labels and the perturbation that produced each
/// image: rotation angle in degrees (R), digit-center offset (x, y) in pixels
/// from the canvas center (T), or log2 of the area factor (S). 1-D
/// perturbations use component 0.
struct LabeledImageSet {
  Tensor<float> images;
  std::vector<std::uint8_t> labels;
  std::vector<std::array<double, 2>> perturbations;
  std::vector<std::vector<ClutterFragment>> clutter;  // per image; empty for R/Plain
  Variant variant = Variant::Plain;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

/// Reads an IDX image/label pair (raw or gzip-compressed). Pixels are scaled
/// to [0, 1].
LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// First `n` images of a set (all of it when n >= size).
LabeledImageSet take(const LabeledImageSet& set, std::size_t n);

struct MnistFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

/// Resolves the data directory: explicit flag, then $STN_LAB_DATA_DIR, then
/// the bundled subset. Accepts files with or without a ".gz" suffix.
MnistFiles locate_mnist(const std::string& dir_flag = "");

/// Knobs for synthesis. Forced values replace the random draw for every
/// image; `copies` generates that many independent perturbations per source
/// image (image i, copy j lands at index i * copies + j).
struct SynthOptions {
  std::optional<double> forced_angle;                 // R, degrees
  std::optional<std::array<double, 2>> forced_offset; // T, pixels
  std::optional<double> forced_scale;                 // S, linear factor
  int clutter = 6;                                    // fragments per T/S image
  std::size_t copies = 1;
};

inline constexpr double kMaxRotation = 90.0;
inline constexpr double kMaxOffset = 16.0;
inline constexpr std::size_t kTranslatedSize = 60;
inline constexpr std::size_t kScaledSize = 112;
inline constexpr double kMinScale = 0.5, kMaxScale = 4.0;

LabeledImageSet synth_rotated(const LabeledImageSet& src, std::uint64_t seed,
                              const SynthOptions& opt = {});
LabeledImageSet synth_translated(const LabeledImageSet& src, std::uint64_t seed,
                                 const SynthOptions& opt = {});
LabeledImageSet synth_scaled(const LabeledImageSet& src, std::uint64_t seed,
                             const SynthOptions& opt = {});
/// Dispatch on variant; Plain returns a copy.
LabeledImageSet synthesize(Variant v, const LabeledImageSet& src, std::uint64_t seed,
                           const SynthOptions& opt = {});

/// Synthesizes only the listed source images (index k of the result uses
/// source image `indices[k]` and the random stream of `stream_ids[k]`).
/// Used by the trainer to draw fresh perturbations per step.
LabeledImageSet synthesize_subset(Variant v, const LabeledImageSet& src, std::uint64_t seed,
                                  const std::vector<std::size_t>& indices,
                                  const std::vector<std::uint64_t>& stream_ids,
                                  const SynthOptions& opt = {});

/// Global pixel mean and population standard deviation. Throws ValueError on
/// zero variance.
Normalization compute_normalization(const LabeledImageSet& set);

/// Applies (x - mean) / std. A set already normalized with the same stats is
/// returned unchanged; a set normalized with different stats is rejected.
void apply_normalization(LabeledImageSet& set, const Normalization& stats);

/// compute + apply; returns the stats so a test split can reuse them.
Normalization normalize(LabeledImageSet& set);

/// Flat little-endian cache container.
void save_cache(const LabeledImageSet& set, const std::filesystem::path& path);
LabeledImageSet load_cache(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_cache(const LabeledImageSet& set);
LabeledImageSet decode_cache(const std::vector<std::uint8_t>& bytes);

/// FNV-1a of the encoded cache; identical sets give identical checksums.
std::uint64_t dataset_checksum(const LabeledImageSet& set);
std::string hex64(std::uint64_t v);

}  // namespace stnlab
