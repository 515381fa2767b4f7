#include "stnlab/network.hpp"

#include <cmath>

namespace stnlab {

namespace {

bool is_input_mode(StMode m) { return m != StMode::TransformFeatureMap; }

}  // namespace

template <typename T>
std::shared_ptr<Tensor<T>> Network<T>::make_param(const std::string& name, Shape shape,
                                                  std::size_t fan_in, bool localization) {
  auto t = std::make_shared<Tensor<T>>(std::move(shape));
  Rng rng(Rng::derive(seed_, {fnv1a64(name.data(), name.size())}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t->values()) v = static_cast<T>(rng.uniform(-bound, bound));
  params_.push_back({name, t, localization, false});
  by_name_[name] = t;
  return t;
}

template <typename T>
void Network<T>::alias(const std::string& name, const std::shared_ptr<Tensor<T>>& t) {
  by_name_[name] = t;
  for (auto& p : params_)
    if (p.tensor == t) p.shared = true;
}

template <typename T>
typename Network<T>::LayerParams Network<T>::make_layer(const std::string& base, const LayerSpec& l,
                                                       const ShapeInfo& in, bool localization) {
  LayerParams ps;
  if (l.kind == LayerKind::Conv) {
    const std::size_t fan = in.c * l.kernel * l.kernel;
    ps.weight = make_param(base + ".weight", {l.filters, in.c, l.kernel, l.kernel}, fan, localization);
    if (l.bias) ps.bias = make_param(base + ".bias", {l.filters}, fan, localization);
  } else if (l.kind == LayerKind::FullyConnected) {
    const std::size_t fan = in.features();
    ps.weight = make_param(base + ".weight", {fan, l.units}, fan, localization);
    if (l.bias) ps.bias = make_param(base + ".bias", {l.units}, fan, localization);
  }
  return ps;
}

template <typename T>
Network<T>::Network(ArchitectureSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  validate_executable(spec_);
  // Classifier: the input it sees depends on any input ST's output size.
  ShapeInfo in{spec_.in_channels, spec_.in_h, spec_.in_w, false};
  for (std::size_t k = 0; k < spec_.st.size(); ++k)
    if (is_input_mode(spec_.st[k].mode)) in = st_geometry(spec_, k).output;
  // Walk the classifier layer by layer so feature-map STs can resize.
  cls_.resize(spec_.classification.size());
  for (std::size_t i = 0; i <= spec_.classification.size(); ++i) {
    for (std::size_t k = 0; k < spec_.st.size(); ++k)
      if (!is_input_mode(spec_.st[k].mode) && depth_position(spec_.classification, spec_.st[k].depth) == i)
        in = st_geometry(spec_, k).output;
    if (i == spec_.classification.size()) break;
    cls_[i] = make_layer("cls." + std::to_string(i), spec_.classification[i], in, false);
    in = apply_layer(in, spec_.classification[i]);
  }
  const std::size_t outputs = spec_.num_classes;
  head_.weight = make_param("cls.out.weight", {in.features(), outputs}, in.features(), false);
  head_.bias = make_param("cls.out.bias", {outputs}, in.features(), false);

  for (std::size_t k = 0; k < spec_.st.size(); ++k) {
    const StInsertion& st = spec_.st[k];
    const std::string prefix = "st" + std::to_string(k);
    const StGeometry geo = st_geometry(spec_, k);
    const std::size_t shared = st.mode == StMode::TransformInputShared ? prefix_length(spec_, st) : 0;
    std::vector<LayerParams> ps(st.localization.size());
    ShapeInfo cur = geo.loc_input;
    for (std::size_t i = 0; i < st.localization.size(); ++i) {
      const std::string base = prefix + ".loc." + std::to_string(i);
      if (i < shared) {
        ps[i] = cls_[i];
        if (ps[i].weight) alias(base + ".weight", ps[i].weight);
        if (ps[i].bias) alias(base + ".bias", ps[i].bias);
      } else {
        ps[i] = make_layer(base, st.localization[i], cur, true);
      }
      cur = apply_layer(cur, st.localization[i]);
    }
    loc_.push_back(ps);
    LayerParams h;
    h.weight = std::make_shared<Tensor<T>>(Shape{cur.features(), 6});
    h.bias = std::make_shared<Tensor<T>>(Shape{6});
    if (!st.identity_offset) {
      (*h.bias)[0] = T{1};
      (*h.bias)[4] = T{1};
    }
    params_.push_back({prefix + ".out.weight", h.weight, true, false});
    params_.push_back({prefix + ".out.bias", h.bias, true, false});
    by_name_[prefix + ".out.weight"] = h.weight;
    by_name_[prefix + ".out.bias"] = h.bias;
    loc_head_.push_back(h);
  }
}

template <typename T>
Tensor<T>& Network<T>::tensor(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValueError("network has no parameter '" + name + "'");
  return *it->second;
}

template <typename T>
const Tensor<T>& Network<T>::tensor(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValueError("network has no parameter '" + name + "'");
  return *it->second;
}

template <typename T>
std::size_t Network<T>::distinct_param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor->size();
  return n;
}

template <typename T>
NodeId Network<T>::run_stack(Graph<T>& g, NodeId x, const std::vector<LayerSpec>& layers,
                             const std::vector<LayerParams>& ps, Activation act,
                             const ForwardOptions& opt) const {
  auto activate = [&](NodeId n) {
    return act == Activation::Relu ? g.relu(n) : g.leaky_relu(n, spec_.leaky_slope);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        x = activate(g.conv2d(x, g.parameter(*ps[i].weight),
                              ps[i].bias ? g.parameter(*ps[i].bias) : Graph<T>::kNone));
        break;
      case LayerKind::MaxPool: x = g.maxpool2x2(x); break;
      case LayerKind::AvgPool: x = g.avgpool2x2(x); break;
      case LayerKind::FullyConnected:
        x = activate(g.fully_connected(g.flatten(x), g.parameter(*ps[i].weight),
                                       ps[i].bias ? g.parameter(*ps[i].bias) : Graph<T>::kNone));
        break;
      case LayerKind::Dropout: {
        if (opt.train && l.p > 0 && !opt.rng) throw StateError("training with dropout needs an rng");
        Rng dummy;
        x = g.dropout(x, l.p, opt.train, opt.rng ? *opt.rng : dummy);
        break;
      }
    }
  }
  return x;
}

template <typename T>
NodeId Network<T>::localize(Graph<T>& g, NodeId x, std::size_t k, std::size_t iteration,
                            const ForwardOptions& opt) const {
  const std::size_t n = g.value(x).dim(0);
  if (opt.loc_override) {
    std::vector<double> theta;
    if (opt.loc_override(k, iteration, n, theta)) {
      if (theta.size() != 6 * n) throw DimensionError("localization override must supply N x 6 values");
      std::vector<T> v(theta.begin(), theta.end());
      return g.input(Tensor<T>({n, 6}, std::move(v)));
    }
  }
  const StInsertion& st = spec_.st[k];
  NodeId h = run_stack(g, x, st.localization, loc_[k], spec_.localization_activation, opt);
  NodeId o = g.fully_connected(g.flatten(h), g.parameter(*loc_head_[k].weight),
                               g.parameter(*loc_head_[k].bias));
  if (st.identity_offset) o = g.add_constant(o, Tensor<T>({6}, std::vector<T>{1, 0, 0, 0, 1, 0}));
  return o;
}

template <typename T>
ForwardResult Network<T>::forward(Graph<T>& g, NodeId input, const ForwardOptions& opt) const {
  const Tensor<T>& in = g.value(input);
  if (in.rank() != 4 || in.dim(1) != spec_.in_channels || in.dim(2) != spec_.in_h || in.dim(3) != spec_.in_w)
    throw DimensionError("network '" + spec_.name + "' expects N x " + std::to_string(spec_.in_channels) +
                         " x " + std::to_string(spec_.in_h) + " x " + std::to_string(spec_.in_w) +
                         " input, got " + shape_str(in.shape()));
  ForwardResult r;
  r.theta.assign(spec_.st.size(), Graph<T>::kNone);
  r.warped.assign(spec_.st.size(), Graph<T>::kNone);
  r.step_theta.resize(spec_.st.size());
  NodeId x = input;
  for (std::size_t k = 0; k < spec_.st.size(); ++k) {
    const StInsertion& st = spec_.st[k];
    if (!is_input_mode(st.mode)) continue;
    const StGeometry geo = st_geometry(spec_, k);
    const std::size_t iters = opt.iterations ? opt.iterations : st.iterations;
    if (iters > 1 && (geo.output.h != geo.warped.h || geo.output.w != geo.warped.w))
      throw ValidationError("iterative transformation needs output size == input size");
    NodeId cur = input, acc = Graph<T>::kNone;
    for (std::size_t it = 0; it < iters; ++it) {
      const NodeId th = localize(g, cur, k, it, opt);
      r.step_theta[k].push_back(th);
      acc = it == 0 ? th : g.compose_affine(acc, th);
      cur = g.spatial_transform(input, acc, geo.output.h, geo.output.w, st.boundary);
    }
    r.theta[k] = acc;
    r.warped[k] = cur;
    x = cur;
  }
  const std::size_t L = spec_.classification.size();
  for (std::size_t i = 0; i <= L; ++i) {
    for (std::size_t k = 0; k < spec_.st.size(); ++k) {
      const StInsertion& st = spec_.st[k];
      if (is_input_mode(st.mode) || depth_position(spec_.classification, st.depth) != i) continue;
      const StGeometry geo = st_geometry(spec_, k);
      const NodeId th = localize(g, x, k, 0, opt);
      r.step_theta[k].push_back(th);
      x = g.spatial_transform(x, th, geo.output.h, geo.output.w, st.boundary);
      r.theta[k] = th;
      r.warped[k] = x;
    }
    if (i < L) x = run_stack(g, x, {spec_.classification[i]}, {cls_[i]}, spec_.activation, opt);
  }
  r.logits = g.fully_connected(g.flatten(x), g.parameter(*head_.weight), g.parameter(*head_.bias));
  return r;
}

template <typename T>
typename Network<T>::Prediction Network<T>::predict(const Tensor<T>& batch, const ForwardOptions& opt) const {
  Graph<T> g;
  const NodeId in = g.input(batch);
  const ForwardResult r = forward(g, in, opt);
  Prediction p{g.value(r.logits), {}};
  for (NodeId t : r.theta) p.theta.push_back(t == Graph<T>::kNone ? Tensor<T>({1}) : g.value(t));
  return p;
}

template class Network<float>;
template class Network<double>;

}  // namespace stnlab
