#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stnlab/rng.hpp"
#include "stnlab/tensor.hpp"
#include "stnlab/warp.hpp"

namespace stnlab {

using NodeId = std::size_t;

enum class OpTag {
  Input,
  Parameter,
  Conv2d,
  MaxPool2x2,
  AvgPool2x2,
  FullyConnected,
  Relu,
  LeakyRelu,
  Dropout,
  Reshape,
  SoftmaxCrossEntropy,
  Sum,
  AddConstant,
  ComposeAffine,
  SpatialTransform,
};

std::string_view op_name(OpTag op);

/// Tape-based reverse-mode autodiff over Tensor<T>.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order. Parameters live outside the graph: `parameter()` binds
/// an external tensor, and the same storage always maps to the same node, so a
/// tensor used on two paths receives one summed gradient. `backward()` adds the
/// loss gradient into every bound parameter's grad buffer.
///
/// A graph is single-use and single-threaded.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NodeId input(Tensor<T> value, bool requires_grad = false);
  NodeId parameter(Tensor<T>& storage);

  /// input N x C x H x W, kernel O x C x K x K, bias O (or kNone).
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);
  NodeId maxpool2x2(NodeId input);
  NodeId avgpool2x2(NodeId input);
  /// input N x D, weight D x M, bias M (or kNone).
  NodeId fully_connected(NodeId input, NodeId weight, NodeId bias);
  NodeId relu(NodeId input);
  NodeId leaky_relu(NodeId input, double slope);
  /// Inverted dropout: survivors are scaled by 1/(1-p). Identity when !train.
  NodeId dropout(NodeId input, double p, bool train, Rng& rng);
  NodeId reshape(NodeId input, Shape shape);
  NodeId flatten(NodeId input);  // N x ... -> N x D
  /// Mean over the batch of -log softmax(logits)[label].
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);
  NodeId sum(NodeId input);
  NodeId add_constant(NodeId input, Tensor<T> constant);
  /// Row-wise homogeneous product a * b of N x 6 affine matrices.
  NodeId compose_affine(NodeId a, NodeId b);
  /// Warps each sample of an N x C x H x W input with its GridSpace matrix
  /// (row of the N x 6 `theta`) to N x C x out_h x out_w.
  NodeId spatial_transform(NodeId input, NodeId theta, std::size_t out_h, std::size_t out_w,
                           BoundaryPolicy policy);

  void backward(NodeId loss);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  /// Gradient of the loss w.r.t. a node (empty span if it received none).
  std::span<const T> grad(NodeId id) const { return nodes_.at(id).value.grad(); }
  OpTag op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return backward_visits_; }

  static constexpr NodeId kNone = static_cast<NodeId>(-1);

 private:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct Node {
    OpTag op;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    Tensor<T>* storage = nullptr;  // bound parameter
    BackwardFn backward;
  };

  NodeId push(OpTag op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn fn);
  Node& node(NodeId id) { return nodes_.at(id); }
  bool wants_grad(NodeId id) const { return id != kNone && nodes_.at(id).requires_grad; }
  std::span<T> grad_buffer(NodeId id);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, NodeId> bound_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

}  // namespace stnlab
