#include "stnlab/graph.hpp"

#include <cmath>
#include <string>

#include "stnlab/kernels.hpp"

namespace stnlab {

std::string_view op_name(OpTag op) {
  switch (op) {
    case OpTag::Input: return "input";
    case OpTag::Parameter: return "parameter";
    case OpTag::Conv2d: return "conv2d";
    case OpTag::MaxPool2x2: return "maxpool2x2";
    case OpTag::AvgPool2x2: return "avgpool2x2";
    case OpTag::FullyConnected: return "fully_connected";
    case OpTag::Relu: return "relu";
    case OpTag::LeakyRelu: return "leaky_relu";
    case OpTag::Dropout: return "dropout";
    case OpTag::Reshape: return "reshape";
    case OpTag::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpTag::Sum: return "sum";
    case OpTag::AddConstant: return "add_constant";
    case OpTag::ComposeAffine: return "compose_affine";
    case OpTag::SpatialTransform: return "spatial_transform";
  }
  return "unknown";
}

template <typename T>
NodeId Graph<T>::push(OpTag op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn fn) {
  if (backward_done_) throw StateError("graph already ran backward; build a new graph");
  bool rg = false;
  for (NodeId in : inputs)
    if (wants_grad(in)) rg = true;
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), rg, nullptr, std::move(fn)});
  return nodes_.size() - 1;
}

template <typename T>
std::span<T> Graph<T>::grad_buffer(NodeId id) {
  Node& n = node(id);
  n.value.ensure_grad();
  return n.value.grad();
}

template <typename T>
NodeId Graph<T>::input(Tensor<T> value, bool requires_grad) {
  NodeId id = push(OpTag::Input, {}, std::move(value), nullptr);
  nodes_[id].requires_grad = requires_grad;
  return id;
}

template <typename T>
NodeId Graph<T>::parameter(Tensor<T>& storage) {
  if (auto it = bound_.find(&storage); it != bound_.end()) return it->second;
  NodeId id = push(OpTag::Parameter, {}, Tensor<T>(storage.shape(), std::vector<T>(
                                             storage.values().begin(), storage.values().end())),
                   nullptr);
  nodes_[id].requires_grad = true;
  nodes_[id].storage = &storage;
  bound_.emplace(&storage, id);
  return id;
}

template <typename T>
NodeId Graph<T>::conv2d(NodeId x, NodeId k, NodeId b) {
  const Tensor<T>& in = value(x);
  const Tensor<T>& ker = value(k);
  if (in.rank() != 4 || ker.rank() != 4)
    throw DimensionError("conv2d expects NCHW input and OCKK kernel, got " + shape_str(in.shape()) +
                         " and " + shape_str(ker.shape()));
  kernels::ConvGeometry g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), ker.dim(0), ker.dim(2), ker.dim(3)};
  if (ker.dim(1) != g.c)
    throw DimensionError("conv2d: input has " + std::to_string(g.c) + " channels, kernel expects " +
                         std::to_string(ker.dim(1)));
  if (g.h < g.kh || g.w < g.kw)
    throw DimensionError("conv2d: input " + shape_str(in.shape()) + " smaller than kernel " +
                         shape_str(ker.shape()));
  if (b != kNone && (value(b).rank() != 1 || value(b).dim(0) != g.o))
    throw DimensionError("conv2d: bias must have " + std::to_string(g.o) + " entries, got " +
                         shape_str(value(b).shape()));
  Tensor<T> out({g.n, g.o, g.out_h(), g.out_w()});
  kernels::conv2d_forward<T>(g, in.values(), ker.values(),
                             b == kNone ? std::span<const T>{} : value(b).values(), out.values());
  return push(OpTag::Conv2d, {x, k, b == kNone ? kNone : b}, std::move(out),
              [g, x, k, b](Graph& gr, NodeId self) {
                std::span<const T> dout = gr.node(self).value.grad();
                std::span<T> dx = gr.wants_grad(x) ? gr.grad_buffer(x) : std::span<T>{};
                std::span<T> dk = gr.wants_grad(k) ? gr.grad_buffer(k) : std::span<T>{};
                std::span<T> db = gr.wants_grad(b) ? gr.grad_buffer(b) : std::span<T>{};
                kernels::conv2d_backward<T>(g, gr.value(x).values(), gr.value(k).values(), dout, dx,
                                            dk, db);
              });
}

template <typename T>
NodeId Graph<T>::maxpool2x2(NodeId x) {
  const Tensor<T>& in = value(x);
  if (in.rank() != 4 || in.dim(2) < 2 || in.dim(3) < 2)
    throw DimensionError("maxpool2x2 expects NCHW with H, W >= 2, got " + shape_str(in.shape()));
  const std::size_t planes = in.dim(0) * in.dim(1);
  Tensor<T> out({in.dim(0), in.dim(1), in.dim(2) / 2, in.dim(3) / 2});
  std::vector<std::uint32_t> arg(out.size());
  kernels::maxpool2x2_forward<T>(planes, in.dim(2), in.dim(3), in.values(), out.values(), arg);
  return push(OpTag::MaxPool2x2, {x}, std::move(out),
              [x, arg = std::move(arg)](Graph& gr, NodeId self) {
                if (!gr.wants_grad(x)) return;
                kernels::maxpool2x2_backward<T>(arg, gr.node(self).value.grad(), gr.grad_buffer(x));
              });
}

template <typename T>
NodeId Graph<T>::avgpool2x2(NodeId x) {
  const Tensor<T>& in = value(x);
  if (in.rank() != 4 || in.dim(2) < 2 || in.dim(3) < 2)
    throw DimensionError("avgpool2x2 expects NCHW with H, W >= 2, got " + shape_str(in.shape()));
  const std::size_t planes = in.dim(0) * in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({in.dim(0), in.dim(1), h / 2, w / 2});
  kernels::avgpool2x2_forward<T>(planes, h, w, in.values(), out.values());
  return push(OpTag::AvgPool2x2, {x}, std::move(out), [x, planes, h, w](Graph& gr, NodeId self) {
    if (!gr.wants_grad(x)) return;
    kernels::avgpool2x2_backward<T>(planes, h, w, gr.node(self).value.grad(), gr.grad_buffer(x));
  });
}

template <typename T>
NodeId Graph<T>::fully_connected(NodeId x, NodeId wt, NodeId b) {
  const Tensor<T>& in = value(x);
  const Tensor<T>& w = value(wt);
  if (in.rank() != 2 || w.rank() != 2 || in.dim(1) != w.dim(0))
    throw DimensionError("fully_connected: input " + shape_str(in.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
  const std::size_t n = in.dim(0), d = in.dim(1), m = w.dim(1);
  if (b != kNone && (value(b).rank() != 1 || value(b).dim(0) != m))
    throw DimensionError("fully_connected: bias must have " + std::to_string(m) + " entries");
  Tensor<T> out({n, m});
  kernels::fc_forward<T>(n, d, m, in.values(), w.values(),
                         b == kNone ? std::span<const T>{} : value(b).values(), out.values());
  return push(OpTag::FullyConnected, {x, wt, b}, std::move(out),
              [x, wt, b, n, d, m](Graph& gr, NodeId self) {
                std::span<T> dx = gr.wants_grad(x) ? gr.grad_buffer(x) : std::span<T>{};
                std::span<T> dw = gr.wants_grad(wt) ? gr.grad_buffer(wt) : std::span<T>{};
                std::span<T> db = gr.wants_grad(b) ? gr.grad_buffer(b) : std::span<T>{};
                kernels::fc_backward<T>(n, d, m, gr.value(x).values(), gr.value(wt).values(),
                                        gr.node(self).value.grad(), dx, dw, db);
              });
}

template <typename T>
NodeId Graph<T>::relu(NodeId x) {
  return leaky_relu(x, 0.0);
}

template <typename T>
NodeId Graph<T>::leaky_relu(NodeId x, double slope) {
  if (slope < 0) throw ValueError("leaky_relu slope must be >= 0");
  const Tensor<T>& in = value(x);
  Tensor<T> out(in.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : s * in[i];
  return push(slope == 0 ? OpTag::Relu : OpTag::LeakyRelu, {x}, std::move(out),
              [x, s](Graph& gr, NodeId self) {
                if (!gr.wants_grad(x)) return;
                std::span<T> dx = gr.grad_buffer(x);
                std::span<const T> in = gr.value(x).values();
                std::span<const T> g = gr.node(self).value.grad();
                for (std::size_t i = 0; i < in.size(); ++i) dx[i] += in[i] > T{0} ? g[i] : s * g[i];
              });
}

template <typename T>
NodeId Graph<T>::dropout(NodeId x, double p, bool train, Rng& rng) {
  if (!(p >= 0 && p < 1)) throw ValueError("dropout probability must be in [0, 1)");
  const Tensor<T>& in = value(x);
  if (!train || p == 0) {
    return push(OpTag::Dropout, {x}, in, [x](Graph& gr, NodeId self) {
      if (!gr.wants_grad(x)) return;
      std::span<T> dx = gr.grad_buffer(x);
      std::span<const T> g = gr.node(self).value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  }
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(in.size());
  for (auto& m : mask) m = rng.bernoulli(p) ? T{0} : scale;
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
  return push(OpTag::Dropout, {x}, std::move(out), [x, mask = std::move(mask)](Graph& gr, NodeId self) {
    if (!gr.wants_grad(x)) return;
    std::span<T> dx = gr.grad_buffer(x);
    std::span<const T> g = gr.node(self).value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

template <typename T>
NodeId Graph<T>::reshape(NodeId x, Shape shape) {
  Tensor<T> out = value(x).reshaped(std::move(shape));
  return push(OpTag::Reshape, {x}, std::move(out), [x](Graph& gr, NodeId self) {
    if (!gr.wants_grad(x)) return;
    std::span<T> dx = gr.grad_buffer(x);
    std::span<const T> g = gr.node(self).value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

template <typename T>
NodeId Graph<T>::flatten(NodeId x) {
  const Tensor<T>& in = value(x);
  if (in.rank() == 2) return x;
  return reshape(x, {in.dim(0), in.size() / in.dim(0)});
}

template <typename T>
NodeId Graph<T>::softmax_cross_entropy(NodeId logits, std::span<const int> labels) {
  const Tensor<T>& z = value(logits);
  if (z.rank() != 2 || z.dim(0) != labels.size())
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<T> prob(z.size());
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ValueError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
    const T* row = z.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j)
      prob[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
    loss += lse - static_cast<double>(row[labels[i]]);
  }
  Tensor<T> out({1}, static_cast<T>(loss / static_cast<double>(n)));
  std::vector<int> lab(labels.begin(), labels.end());
  return push(OpTag::SoftmaxCrossEntropy, {logits}, std::move(out),
              [logits, n, k, prob = std::move(prob), lab = std::move(lab)](Graph& gr, NodeId self) {
                if (!gr.wants_grad(logits)) return;
                const T g = gr.node(self).value.grad()[0] / static_cast<T>(n);
                std::span<T> dz = gr.grad_buffer(logits);
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t j = 0; j < k; ++j)
                    dz[i * k + j] += g * (prob[i * k + j] - (static_cast<int>(j) == lab[i] ? T{1} : T{0}));
              });
}

template <typename T>
NodeId Graph<T>::sum(NodeId x) {
  double s = 0;
  for (T v : value(x).values()) s += v;
  return push(OpTag::Sum, {x}, Tensor<T>({1}, static_cast<T>(s)), [x](Graph& gr, NodeId self) {
    if (!gr.wants_grad(x)) return;
    const T g = gr.node(self).value.grad()[0];
    for (T& d : gr.grad_buffer(x)) d += g;
  });
}

template <typename T>
NodeId Graph<T>::add_constant(NodeId x, Tensor<T> c) {
  const Tensor<T>& in = value(x);
  if (c.size() != in.size() && c.size() * in.dim(0) != in.size())
    throw DimensionError("add_constant: constant " + shape_str(c.shape()) + " does not broadcast to " +
                         shape_str(in.shape()));
  Tensor<T> out = in;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % c.size()];
  return push(OpTag::AddConstant, {x}, std::move(out), [x](Graph& gr, NodeId self) {
    if (!gr.wants_grad(x)) return;
    std::span<T> dx = gr.grad_buffer(x);
    std::span<const T> g = gr.node(self).value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

template <typename T>
NodeId Graph<T>::compose_affine(NodeId a, NodeId b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  if (A.rank() != 2 || A.dim(1) != 6 || A.shape() != B.shape())
    throw DimensionError("compose_affine expects two N x 6 tensors, got " + shape_str(A.shape()) +
                         " and " + shape_str(B.shape()));
  const std::size_t n = A.dim(0);
  Tensor<T> out({n, 6});
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = A.data() + 6 * i;
    const T* q = B.data() + 6 * i;
    T* r = out.data() + 6 * i;
    r[0] = p[0] * q[0] + p[1] * q[3];
    r[1] = p[0] * q[1] + p[1] * q[4];
    r[2] = p[0] * q[2] + p[1] * q[5] + p[2];
    r[3] = p[3] * q[0] + p[4] * q[3];
    r[4] = p[3] * q[1] + p[4] * q[4];
    r[5] = p[3] * q[2] + p[4] * q[5] + p[5];
  }
  return push(OpTag::ComposeAffine, {a, b}, std::move(out), [a, b, n](Graph& gr, NodeId self) {
    std::span<const T> g = gr.node(self).value.grad();
    const T* A = gr.value(a).data();
    const T* B = gr.value(b).data();
    if (gr.wants_grad(a)) {
      std::span<T> da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) {
        const T* q = B + 6 * i;
        const T* gi = g.data() + 6 * i;
        T* d = da.data() + 6 * i;
        for (int r = 0; r < 2; ++r) {
          const T g0 = gi[3 * r], g1 = gi[3 * r + 1], g2 = gi[3 * r + 2];
          d[3 * r] += g0 * q[0] + g1 * q[1] + g2 * q[2];
          d[3 * r + 1] += g0 * q[3] + g1 * q[4] + g2 * q[5];
          d[3 * r + 2] += g2;
        }
      }
    }
    if (gr.wants_grad(b)) {
      std::span<T> db = gr.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = A + 6 * i;
        const T* gi = g.data() + 6 * i;
        T* d = db.data() + 6 * i;
        for (int c = 0; c < 3; ++c) {
          d[c] += p[0] * gi[c] + p[3] * gi[3 + c];
          d[3 + c] += p[1] * gi[c] + p[4] * gi[3 + c];
        }
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::spatial_transform(NodeId x, NodeId theta, std::size_t out_h, std::size_t out_w,
                                   BoundaryPolicy policy) {
  const Tensor<T>& in = value(x);
  const Tensor<T>& th = value(theta);
  if (in.rank() != 4 || th.rank() != 2 || th.dim(1) != 6 || th.dim(0) != in.dim(0))
    throw DimensionError("spatial_transform: input " + shape_str(in.shape()) + " with theta " +
                         shape_str(th.shape()) + " (need N x C x H x W and N x 6)");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({n, c, out_h, out_w});
  std::vector<SamplingGrid> grids;
  grids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    AffineTransform t;
    for (int j = 0; j < 6; ++j) t.m[j] = static_cast<double>(th[6 * i + j]);
    grids.push_back(affine_grid(t, out_h, out_w));
    bilinear_sample<T>(in.values().subspan(i * c * h * w, c * h * w), c, h, w, grids.back(), policy,
                       out.values().subspan(i * c * out_h * out_w, c * out_h * out_w));
  }
  return push(OpTag::SpatialTransform, {x, theta}, std::move(out),
              [x, theta, n, c, h, w, policy, grids = std::move(grids)](Graph& gr, NodeId self) {
                const bool want_x = gr.wants_grad(x), want_t = gr.wants_grad(theta);
                std::span<const T> g = gr.node(self).value.grad();
                std::span<T> dx = want_x ? gr.grad_buffer(x) : std::span<T>{};
                std::span<T> dth = want_t ? gr.grad_buffer(theta) : std::span<T>{};
                std::span<const T> in = gr.value(x).values();
                std::vector<double> dgrid;
                for (std::size_t i = 0; i < n; ++i) {
                  const SamplingGrid& grid = grids[i];
                  const std::size_t np = grid.h * grid.w;
                  if (want_t) dgrid.assign(2 * np, 0.0);
                  bilinear_sample_backward<T>(in.subspan(i * c * h * w, c * h * w), c, h, w, grid, policy,
                                              g.subspan(i * c * np, c * np),
                                              want_x ? dx.subspan(i * c * h * w, c * h * w) : std::span<T>{},
                                              want_t ? std::span<double>(dgrid) : std::span<double>{});
                  if (want_t) {
                    const auto dp = grid_grad_to_params(grid, dgrid);
                    for (int j = 0; j < 6; ++j) dth[6 * i + j] += static_cast<T>(dp[j]);
                  }
                }
              });
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
  if (nodes_.empty() || loss >= nodes_.size())
    throw StateError("backward called before a forward pass produced the loss node");
  if (backward_done_) throw StateError("backward already ran on this graph");
  if (nodes_[loss].value.size() != 1) throw StateError("backward needs a scalar loss node");
  backward_done_ = true;
  std::vector<char> live(loss + 1, 0);
  live[loss] = 1;
  for (NodeId i = loss + 1; i-- > 0;) {
    if (!live[i]) continue;
    for (NodeId in : nodes_[i].inputs)
      if (in != kNone) live[in] = 1;
  }
  grad_buffer(loss)[0] = T{1};
  for (NodeId i = loss + 1; i-- > 0;) {
    Node& nd = nodes_[i];
    if (!live[i] || !nd.requires_grad) continue;
    ++backward_visits_;
    if (nd.backward && nd.value.has_grad()) nd.backward(*this, i);
  }
  for (Node& nd : nodes_) {
    if (!nd.storage || !nd.value.has_grad()) continue;
    nd.storage->ensure_grad();
    std::span<T> dst = nd.storage->grad();
    std::span<const T> src = nd.value.grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace stnlab
