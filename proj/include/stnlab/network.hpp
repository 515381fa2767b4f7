#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stnlab/arch.hpp"
#include "stnlab/graph.hpp"

namespace stnlab {

template <typename T>
struct NamedParam {
  std::string name;
  std::shared_ptr<Tensor<T>> tensor;
  bool localization = false;  // owned by a localization network
  bool shared = false;        // also used by a localization network (STN-SLX prefix)
};

/// Replaces a localization network's output: fills `theta` (N x 6, row-major
/// GridSpace matrices) and returns true, or returns false to run the network.
using LocOverride =
    std::function<bool(std::size_t st, std::size_t iteration, std::size_t n, std::vector<double>& theta)>;

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;           // dropout masks; required when training with dropout
  std::size_t iterations = 0;   // input-ST iterations; 0 uses the spec value
  LocOverride loc_override;
};

struct ForwardResult {
  NodeId logits = 0;
  std::vector<NodeId> theta;   // final GridSpace matrix per ST (N x 6)
  std::vector<NodeId> warped;  // ST output per ST
  std::vector<std::vector<NodeId>> step_theta;  // per ST, per iteration prediction
};

/// Executable network for an ArchitectureSpec. Parameters are held by
/// shared pointers; the shared prefix of an STN-SLX localization network
/// points at the classification tensors themselves.
template <typename T>
class Network {
 public:
  Network(ArchitectureSpec spec, std::uint64_t seed);
  Network(const Network&) = delete;  // copies would alias the parameter storage
  Network& operator=(const Network&) = delete;

  const ArchitectureSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  /// Distinct learnable tensors in a fixed order.
  const std::vector<NamedParam<T>>& params() const { return params_; }
  /// Lookup by name; localization aliases of shared tensors resolve too.
  Tensor<T>& tensor(const std::string& name);
  const Tensor<T>& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return by_name_.count(name) != 0; }

  ForwardResult forward(Graph<T>& g, NodeId input, const ForwardOptions& opt = {}) const;

  struct Prediction {
    Tensor<T> logits;
    std::vector<Tensor<T>> theta;  // per ST
  };
  Prediction predict(const Tensor<T>& batch, const ForwardOptions& opt = {}) const;

  /// Copies every parameter value from a network with the same parameter
  /// names and shapes (e.g. the same spec with another iteration count).
  template <typename U>
  void copy_values_from(const Network<U>& other);

  std::size_t distinct_param_count() const;

 private:
  struct LayerParams {
    std::shared_ptr<Tensor<T>> weight, bias;
  };

  std::shared_ptr<Tensor<T>> make_param(const std::string& name, Shape shape, std::size_t fan_in,
                                        bool localization);
  void alias(const std::string& name, const std::shared_ptr<Tensor<T>>& t);
  LayerParams make_layer(const std::string& base, const LayerSpec& l, const ShapeInfo& in,
                         bool localization);
  NodeId run_stack(Graph<T>& g, NodeId x, const std::vector<LayerSpec>& layers,
                   const std::vector<LayerParams>& ps, Activation act, const ForwardOptions& opt) const;
  NodeId localize(Graph<T>& g, NodeId x, std::size_t k, std::size_t iteration,
                  const ForwardOptions& opt) const;

  ArchitectureSpec spec_;
  std::uint64_t seed_;
  std::vector<NamedParam<T>> params_;
  std::map<std::string, std::shared_ptr<Tensor<T>>> by_name_;
  std::vector<LayerParams> cls_;
  LayerParams head_;
  std::vector<std::vector<LayerParams>> loc_;
  std::vector<LayerParams> loc_head_;
};

template <typename T>
template <typename U>
void Network<T>::copy_values_from(const Network<U>& other) {
  if (other.params().size() != params_.size())
    throw ValidationError("copy_values_from: networks have different parameter layouts");
  for (auto& p : params_) {
    if (!other.has_tensor(p.name) || other.tensor(p.name).shape() != p.tensor->shape())
      throw ValidationError("copy_values_from: no matching tensor for " + p.name);
    const Tensor<U>& src = other.tensor(p.name);
    for (std::size_t i = 0; i < src.size(); ++i) (*p.tensor)[i] = static_cast<T>(src[i]);
  }
}

}  // namespace stnlab
