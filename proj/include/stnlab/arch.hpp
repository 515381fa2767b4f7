#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stnlab/warp.hpp"

namespace stnlab {

enum class LayerKind { Conv, MaxPool, AvgPool, FullyConnected, Dropout };

/// One layer of a classification or localization stack. Convolutions and
/// hidden fully connected layers are followed by the network's activation.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t filters = 0;  // Conv
  std::size_t kernel = 0;   // Conv, square
  std::size_t padding = 0;  // Conv, zero padding per side
  std::size_t window = 2;   // pools
  std::size_t stride = 2;   // pools
  std::size_t units = 0;    // FullyConnected
  double p = 0;             // Dropout
  bool bias = true;         // Conv / FullyConnected

  static LayerSpec conv(std::size_t filters, std::size_t kernel, bool bias = true) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.filters = filters;
    l.kernel = kernel;
    l.bias = bias;
    return l;
  }
  static LayerSpec maxpool() { return LayerSpec{LayerKind::MaxPool}; }
  static LayerSpec avgpool() { return LayerSpec{LayerKind::AvgPool}; }
  static LayerSpec fc(std::size_t units) {
    LayerSpec l;
    l.kind = LayerKind::FullyConnected;
    l.units = units;
    return l;
  }
  static LayerSpec dropout(double p) {
    LayerSpec l;
    l.kind = LayerKind::Dropout;
    l.p = p;
    return l;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class StMode {
  TransformFeatureMap,   // STN-CX: warp the feature map at depth X
  TransformInputDeep,    // STN-DLX: warp the input, localization has its own copy of the prefix
  TransformInputShared,  // STN-SLX: warp the input, localization shares the prefix
  TransformInputPlain,   // STN-C0: warp the input, localization reads the input directly
};

std::string_view st_mode_name(StMode m);
StMode parse_st_mode(std::string_view s);

struct StInsertion {
  std::size_t depth = 0;  // number of classification convolutions before the ST
  /// Localization layers. For Deep and Shared modes the leading layers mirror
  /// classification layers up to the insertion point.
  std::vector<LayerSpec> localization;
  StMode mode = StMode::TransformInputPlain;
  std::size_t iterations = 1;
  std::size_t out_h = 0, out_w = 0;  // 0 keeps the size of the warped tensor
  BoundaryPolicy boundary = BoundaryPolicy::ClampNearest;
  bool identity_offset = false;  // o1+1, o5+1 convention instead of bias-initialized identity

  friend bool operator==(const StInsertion&, const StInsertion&) = default;
};

enum class Activation { Relu, LeakyRelu };

struct ArchitectureSpec {
  std::string name;
  std::size_t in_channels = 1, in_h = 28, in_w = 28;
  std::vector<LayerSpec> classification;
  std::size_t num_classes = 10;
  std::size_t heads = 1;  // parallel softmax outputs
  std::vector<StInsertion> st;
  Activation activation = Activation::Relu;
  double leaky_slope = 1.0 / 3.0;
  Activation localization_activation = Activation::Relu;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Index into `layers` right after the first `depth` convolutions and any
/// pooling/dropout layers that follow the last of them.
std::size_t depth_position(const std::vector<LayerSpec>& layers, std::size_t depth);

/// Number of leading localization layers that mirror classification layers
/// (zero for Plain and FeatureMap modes).
std::size_t prefix_length(const ArchitectureSpec& spec, const StInsertion& st);

/// Checks structural invariants; throws ValidationError.
void validate(const ArchitectureSpec& spec);
/// validate() plus the restrictions of the executable network (valid 2x2
/// pooling, unpadded convolutions, single head).
void validate_executable(const ArchitectureSpec& spec);

/// Shape of a tensor flowing through the network: C x H x W, or a flat
/// vector of `c` features when `flat`.
struct ShapeInfo {
  std::size_t c = 0, h = 0, w = 0;
  bool flat = false;
  std::size_t features() const { return flat ? c : c * h * w; }
};

ShapeInfo apply_layer(const ShapeInfo& in, const LayerSpec& l);

/// Learnable parameters, counting tensors shared between the classification
/// and localization networks once.
std::size_t count_params(const ArchitectureSpec& spec);

/// Width of the tensor the ST warps and the stride accumulated before it.
struct StGeometry {
  ShapeInfo warped;  // tensor the ST samples from
  ShapeInfo output;  // ST output
  ShapeInfo loc_input;
  std::size_t cumulative_stride = 1;
};
StGeometry st_geometry(const ArchitectureSpec& spec, std::size_t st_index);

/// Pixel scale m for translation extraction of ST `st_index`.
double effective_pixel_scale(const ArchitectureSpec& spec, std::size_t st_index = 0);

std::string spec_to_json(const ArchitectureSpec& spec, int indent = 2);
ArchitectureSpec spec_from_json(std::string_view text);
/// FNV-1a of the canonical (compact, key-sorted) JSON form.
std::uint64_t spec_hash(const ArchitectureSpec& spec);

std::vector<std::string> builtin_spec_names();
ArchitectureSpec builtin_spec(std::string_view name);
/// Catalog name if known, otherwise reads a JSON file.
ArchitectureSpec resolve_spec(const std::string& name_or_path);

}  // namespace stnlab
