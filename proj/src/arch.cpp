#include "stnlab/arch.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "stnlab/rng.hpp"

namespace stnlab {

using nlohmann::json;

std::string_view st_mode_name(StMode m) {
  switch (m) {
    case StMode::TransformFeatureMap: return "feature_map";
    case StMode::TransformInputDeep: return "input_deep";
    case StMode::TransformInputShared: return "input_shared";
    case StMode::TransformInputPlain: return "input_plain";
  }
  return "unknown";
}

StMode parse_st_mode(std::string_view s) {
  if (s == "feature_map") return StMode::TransformFeatureMap;
  if (s == "input_deep") return StMode::TransformInputDeep;
  if (s == "input_shared") return StMode::TransformInputShared;
  if (s == "input_plain") return StMode::TransformInputPlain;
  throw ValidationError("unknown ST mode '" + std::string(s) +
                        "' (expected feature_map, input_deep, input_shared, input_plain)");
}

std::size_t depth_position(const std::vector<LayerSpec>& layers, std::size_t depth) {
  if (depth == 0) return 0;
  std::size_t convs = 0, i = 0;
  for (; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Conv && ++convs == depth) break;
  }
  if (convs < depth)
    throw ValidationError("ST depth " + std::to_string(depth) + " exceeds the " +
                          std::to_string(convs) + " convolutional layers of the classifier");
  ++i;
  while (i < layers.size() &&
         (layers[i].kind == LayerKind::MaxPool || layers[i].kind == LayerKind::AvgPool ||
          layers[i].kind == LayerKind::Dropout))
    ++i;
  return i;
}

std::size_t prefix_length(const ArchitectureSpec& spec, const StInsertion& st) {
  if (st.mode != StMode::TransformInputDeep && st.mode != StMode::TransformInputShared) return 0;
  return depth_position(spec.classification, st.depth);
}

ShapeInfo apply_layer(const ShapeInfo& in, const LayerSpec& l) {
  ShapeInfo out = in;
  switch (l.kind) {
    case LayerKind::Conv: {
      if (in.flat) throw ValidationError("convolution after a fully connected layer");
      const std::size_t h = in.h + 2 * l.padding, w = in.w + 2 * l.padding;
      if (h < l.kernel || w < l.kernel)
        throw ValidationError("convolution kernel " + std::to_string(l.kernel) + " larger than its " +
                              std::to_string(in.h) + "x" + std::to_string(in.w) + " input");
      out.c = l.filters;
      out.h = h - l.kernel + 1;
      out.w = w - l.kernel + 1;
      return out;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (in.flat) throw ValidationError("pooling after a fully connected layer");
      if (in.h < l.window || in.w < l.window)
        throw ValidationError("pooling window larger than its " + std::to_string(in.h) + "x" +
                              std::to_string(in.w) + " input");
      out.h = (in.h - l.window) / l.stride + 1;
      out.w = (in.w - l.window) / l.stride + 1;
      return out;
    case LayerKind::FullyConnected:
      out.flat = true;
      out.c = l.units;
      out.h = out.w = 1;
      return out;
    case LayerKind::Dropout: return out;
  }
  return out;
}

namespace {

std::size_t layer_params(const ShapeInfo& in, const LayerSpec& l) {
  if (l.kind == LayerKind::Conv) return l.filters * in.c * l.kernel * l.kernel + (l.bias ? l.filters : 0);
  if (l.kind == LayerKind::FullyConnected) return in.features() * l.units + (l.bias ? l.units : 0);
  return 0;
}

void check_layer(const LayerSpec& l, const std::string& where) {
  switch (l.kind) {
    case LayerKind::Conv:
      if (l.filters == 0 || l.kernel == 0) throw ValidationError(where + ": convolution needs filters and kernel > 0");
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (l.window == 0 || l.stride == 0) throw ValidationError(where + ": pooling needs window and stride > 0");
      break;
    case LayerKind::FullyConnected:
      if (l.units == 0) throw ValidationError(where + ": fully connected layer needs units > 0");
      break;
    case LayerKind::Dropout:
      if (!(l.p >= 0 && l.p < 1)) throw ValidationError(where + ": dropout probability must be in [0, 1)");
      break;
  }
}

bool is_input_mode(StMode m) { return m != StMode::TransformFeatureMap; }

ShapeInfo input_shape(const ArchitectureSpec& s) { return {s.in_channels, s.in_h, s.in_w, false}; }

ShapeInfo with_output(ShapeInfo warped, const StInsertion& st) {
  if (st.out_h) warped.h = st.out_h;
  if (st.out_w) warped.w = st.out_w;
  return warped;
}

// Shape of the classifier activations at position `pos` (before layer `pos`),
// honoring any ST resizes on the way.
ShapeInfo shape_at(const ArchitectureSpec& spec, std::size_t pos, bool after_st_at_pos) {
  ShapeInfo cur = input_shape(spec);
  for (const auto& st : spec.st)
    if (is_input_mode(st.mode)) cur = with_output(cur, st);
  for (std::size_t i = 0; i <= spec.classification.size(); ++i) {
    for (const auto& st : spec.st) {
      if (st.mode != StMode::TransformFeatureMap) continue;
      if (depth_position(spec.classification, st.depth) != i) continue;
      if (i == pos && !after_st_at_pos) return cur;
      cur = with_output(cur, st);
    }
    if (i == pos) return cur;
    if (i < spec.classification.size()) cur = apply_layer(cur, spec.classification[i]);
  }
  return cur;
}

}  // namespace

void validate(const ArchitectureSpec& spec) {
  const std::string who = "spec '" + spec.name + "'";
  if (spec.in_channels == 0 || spec.in_h == 0 || spec.in_w == 0)
    throw ValidationError(who + ": input dimensions must be positive");
  if (spec.num_classes < 2) throw ValidationError(who + ": need at least 2 classes");
  if (spec.heads == 0) throw ValidationError(who + ": need at least one output head");
  if (spec.leaky_slope < 0) throw ValidationError(who + ": leaky slope must be >= 0");
  for (std::size_t i = 0; i < spec.classification.size(); ++i)
    check_layer(spec.classification[i], who + " classification layer " + std::to_string(i));
  std::map<std::size_t, int> fm_positions;
  for (std::size_t k = 0; k < spec.st.size(); ++k) {
    const StInsertion& st = spec.st[k];
    const std::string where = who + " ST " + std::to_string(k);
    for (std::size_t i = 0; i < st.localization.size(); ++i)
      check_layer(st.localization[i], where + " localization layer " + std::to_string(i));
    const std::size_t pos = depth_position(spec.classification, st.depth);
    if (st.iterations == 0) throw ValidationError(where + ": iterations must be >= 1");
    if (st.iterations > 1 && !is_input_mode(st.mode))
      throw ValidationError(where + ": iterative transformation requires an input-transforming mode");
    if (st.mode == StMode::TransformInputPlain && st.depth != 0)
      throw ValidationError(where + ": input_plain mode has depth 0");
    if ((st.mode == StMode::TransformInputDeep || st.mode == StMode::TransformInputShared) && st.depth == 0)
      throw ValidationError(where + ": deep/shared localization needs depth >= 1");
    if (st.mode == StMode::TransformFeatureMap && fm_positions[pos]++)
      throw ValidationError(where + ": two feature-map STs at the same depth");
    const std::size_t p = prefix_length(spec, st);
    if (st.localization.size() < p)
      throw ValidationError(where + ": localization must start with the " + std::to_string(p) +
                            " classification layers it mirrors");
    for (std::size_t i = 0; i < p; ++i)
      if (!(st.localization[i] == spec.classification[i]))
        throw ValidationError(where + ": localization layer " + std::to_string(i) +
                              " differs from classification layer " + std::to_string(i));
    const StGeometry g = st_geometry(spec, k);
    if (st.iterations > 1 && (g.output.h != g.warped.h || g.output.w != g.warped.w))
      throw ValidationError(where + ": iterative transformation needs output size == input size");
    ShapeInfo loc = g.loc_input;
    for (const auto& l : st.localization) loc = apply_layer(loc, l);
  }
  ShapeInfo cur = shape_at(spec, spec.classification.size(), true);
  (void)cur;
}

void validate_executable(const ArchitectureSpec& spec) {
  validate(spec);
  const std::string who = "spec '" + spec.name + "'";
  if (spec.heads != 1) throw ValidationError(who + ": multi-head outputs are not executable");
  auto check = [&](const LayerSpec& l) {
    if (l.kind == LayerKind::Conv && l.padding != 0)
      throw ValidationError(who + ": padded convolutions are not executable");
    if ((l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool) && (l.window != 2 || l.stride != 2))
      throw ValidationError(who + ": only 2x2 stride-2 pooling is executable");
  };
  for (const auto& l : spec.classification) check(l);
  int input_sts = 0;
  for (const auto& st : spec.st) {
    for (const auto& l : st.localization) check(l);
    if (is_input_mode(st.mode) && ++input_sts > 1)
      throw ValidationError(who + ": at most one input-transforming ST is executable");
  }
}

StGeometry st_geometry(const ArchitectureSpec& spec, std::size_t st_index) {
  const StInsertion& st = spec.st.at(st_index);
  StGeometry g;
  if (is_input_mode(st.mode)) {
    g.warped = input_shape(spec);
    g.loc_input = g.warped;
    g.cumulative_stride = 1;
  } else {
    const std::size_t pos = depth_position(spec.classification, st.depth);
    g.warped = shape_at(spec, pos, false);
    g.loc_input = g.warped;
    for (std::size_t i = 0; i < pos; ++i) {
      const LayerSpec& l = spec.classification[i];
      if (l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool) g.cumulative_stride *= l.stride;
    }
  }
  g.output = with_output(g.warped, st);
  return g;
}

double effective_pixel_scale(const ArchitectureSpec& spec, std::size_t st_index) {
  if (st_index >= spec.st.size())
    throw ValidationError("spec '" + spec.name + "' has no ST " + std::to_string(st_index));
  const StGeometry g = st_geometry(spec, st_index);
  return 0.5 * static_cast<double>(g.warped.w - 1) * static_cast<double>(g.cumulative_stride);
}

std::size_t count_params(const ArchitectureSpec& spec) {
  validate(spec);
  std::size_t total = 0;
  ShapeInfo cur = shape_at(spec, 0, true);
  for (std::size_t i = 0; i < spec.classification.size(); ++i) {
    cur = shape_at(spec, i, true);
    total += layer_params(cur, spec.classification[i]);
  }
  cur = shape_at(spec, spec.classification.size(), true);
  const std::size_t outputs = spec.num_classes * spec.heads;
  total += cur.features() * outputs + outputs;
  for (std::size_t k = 0; k < spec.st.size(); ++k) {
    const StInsertion& st = spec.st[k];
    const std::size_t shared = st.mode == StMode::TransformInputShared ? prefix_length(spec, st) : 0;
    ShapeInfo loc = st_geometry(spec, k).loc_input;
    for (std::size_t i = 0; i < st.localization.size(); ++i) {
      if (i >= shared) total += layer_params(loc, st.localization[i]);
      loc = apply_layer(loc, st.localization[i]);
    }
    total += loc.features() * 6 + 6;
  }
  return total;
}

// ---------------------------------------------------------------- JSON

namespace {

void only_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ValidationError(where + ": unknown key '" + it.key() + "'");
}

template <typename V>
V get_or(const json& j, const char* key, V fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<V>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::size_t need_size(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  return get_or<std::size_t>(j, key, 0);
}

json layer_to_json(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv: {
      json j{{"type", "conv"}, {"filters", l.filters}, {"kernel", l.kernel}};
      if (l.padding) j["padding"] = l.padding;
      if (!l.bias) j["bias"] = false;
      return j;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      json j{{"type", l.kind == LayerKind::MaxPool ? "maxpool" : "avgpool"}};
      if (l.window != 2) j["window"] = l.window;
      if (l.stride != 2) j["stride"] = l.stride;
      return j;
    }
    case LayerKind::FullyConnected: {
      json j{{"type", "fc"}, {"units", l.units}};
      if (!l.bias) j["bias"] = false;
      return j;
    }
    case LayerKind::Dropout: return json{{"type", "dropout"}, {"p", l.p}};
  }
  return json();
}

LayerSpec layer_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("type")) throw ValidationError(where + ": layer needs a 'type'");
  const std::string type = get_or<std::string>(j, "type", "");
  LayerSpec l;
  if (type == "conv") {
    only_keys(j, {"type", "filters", "kernel", "padding", "bias"}, where);
    l = LayerSpec::conv(need_size(j, "filters", where), need_size(j, "kernel", where), get_or(j, "bias", true));
    l.padding = get_or<std::size_t>(j, "padding", 0);
  } else if (type == "maxpool" || type == "avgpool") {
    only_keys(j, {"type", "window", "stride"}, where);
    l = type == "maxpool" ? LayerSpec::maxpool() : LayerSpec::avgpool();
    l.window = get_or<std::size_t>(j, "window", 2);
    l.stride = get_or<std::size_t>(j, "stride", 2);
  } else if (type == "fc") {
    only_keys(j, {"type", "units", "bias"}, where);
    l = LayerSpec::fc(need_size(j, "units", where));
    l.bias = get_or(j, "bias", true);
  } else if (type == "dropout") {
    only_keys(j, {"type", "p"}, where);
    l = LayerSpec::dropout(get_or(j, "p", 0.5));
  } else {
    throw ValidationError(where + ": unknown layer type '" + type + "' (conv, maxpool, avgpool, fc, dropout)");
  }
  return l;
}

json layers_to_json(const std::vector<LayerSpec>& ls) {
  json a = json::array();
  for (const auto& l : ls) a.push_back(layer_to_json(l));
  return a;
}

std::vector<LayerSpec> layers_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected a list of layers");
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(layer_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "leaky_relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  throw ValidationError("unknown activation '" + s + "' (relu, leaky_relu)");
}

json spec_json(const ArchitectureSpec& s) {
  json j;
  j["name"] = s.name;
  j["input"] = {{"channels", s.in_channels}, {"height", s.in_h}, {"width", s.in_w}};
  j["classification"] = layers_to_json(s.classification);
  j["num_classes"] = s.num_classes;
  j["heads"] = s.heads;
  j["activation"] = activation_name(s.activation);
  j["leaky_slope"] = s.leaky_slope;
  j["localization_activation"] = activation_name(s.localization_activation);
  json sts = json::array();
  for (const auto& st : s.st) {
    json t;
    t["depth"] = st.depth;
    t["mode"] = std::string(st_mode_name(st.mode));
    t["localization"] = layers_to_json(st.localization);
    t["iterations"] = st.iterations;
    t["output"] = {{"height", st.out_h}, {"width", st.out_w}};
    t["boundary"] = st.boundary == BoundaryPolicy::ClampNearest ? "clamp" : "zero";
    t["identity_offset"] = st.identity_offset;
    sts.push_back(t);
  }
  j["st"] = sts;
  return j;
}

}  // namespace

std::string spec_to_json(const ArchitectureSpec& spec, int indent) { return spec_json(spec).dump(indent); }

ArchitectureSpec spec_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  only_keys(j, {"name", "input", "classification", "num_classes", "heads", "activation", "leaky_slope",
                "localization_activation", "st"},
            "spec");
  ArchitectureSpec s;
  s.name = get_or<std::string>(j, "name", "custom");
  if (!j.contains("input")) throw ValidationError("spec: missing 'input'");
  only_keys(j["input"], {"channels", "height", "width"}, "spec.input");
  s.in_channels = get_or<std::size_t>(j["input"], "channels", 1);
  s.in_h = need_size(j["input"], "height", "spec.input");
  s.in_w = need_size(j["input"], "width", "spec.input");
  s.classification = layers_from_json(j.value("classification", json::array()), "spec.classification");
  s.num_classes = get_or<std::size_t>(j, "num_classes", 10);
  s.heads = get_or<std::size_t>(j, "heads", 1);
  s.activation = parse_activation(get_or<std::string>(j, "activation", "relu"));
  s.leaky_slope = get_or(j, "leaky_slope", 1.0 / 3.0);
  s.localization_activation = parse_activation(get_or<std::string>(j, "localization_activation", "relu"));
  const json sts = j.value("st", json::array());
  if (!sts.is_array()) throw ValidationError("spec.st: expected a list");
  for (std::size_t k = 0; k < sts.size(); ++k) {
    const std::string where = "spec.st[" + std::to_string(k) + "]";
    const json& t = sts[k];
    only_keys(t, {"depth", "mode", "localization", "iterations", "output", "boundary", "identity_offset"}, where);
    StInsertion st;
    st.depth = get_or<std::size_t>(t, "depth", 0);
    st.mode = parse_st_mode(get_or<std::string>(t, "mode", "input_plain"));
    st.localization = layers_from_json(t.value("localization", json::array()), where + ".localization");
    st.iterations = get_or<std::size_t>(t, "iterations", 1);
    if (t.contains("output")) {
      only_keys(t["output"], {"height", "width"}, where + ".output");
      st.out_h = get_or<std::size_t>(t["output"], "height", 0);
      st.out_w = get_or<std::size_t>(t["output"], "width", 0);
    }
    const std::string b = get_or<std::string>(t, "boundary", "clamp");
    if (b == "clamp") st.boundary = BoundaryPolicy::ClampNearest;
    else if (b == "zero") st.boundary = BoundaryPolicy::ZeroFill;
    else throw ValidationError(where + ": boundary must be 'clamp' or 'zero'");
    st.identity_offset = get_or(t, "identity_offset", false);
    s.st.push_back(st);
  }
  validate(s);
  return s;
}

std::uint64_t spec_hash(const ArchitectureSpec& spec) {
  const std::string canon = spec_json(spec).dump();
  return fnv1a64(canon.data(), canon.size());
}

// ---------------------------------------------------------------- catalog

namespace {

using L = LayerSpec;

struct Family {
  std::string prefix;
  std::size_t side;
  std::vector<LayerSpec> cnn;        // baseline classifier
  std::vector<LayerSpec> cls;        // classifier used with STs
  std::vector<LayerSpec> loc_c0;     // localization of STN-C0
  std::vector<LayerSpec> loc_c1;     // localization after the first conv + pool
  std::size_t c0_out = 0, c1_out = 0, input_out = 0;  // ST output sizes (0 = same)
};

ArchitectureSpec make(const Family& f, const std::string& arch) {
  ArchitectureSpec s;
  s.name = f.prefix + "/" + arch;
  s.in_h = s.in_w = f.side;
  if (arch == "cnn") {
    s.classification = f.cnn;
    return s;
  }
  s.classification = f.cls;
  StInsertion st;
  if (arch == "stn-c0") {
    st.mode = StMode::TransformInputPlain;
    st.localization = f.loc_c0;
    st.out_h = st.out_w = f.c0_out;
  } else if (arch == "stn-c1") {
    st.mode = StMode::TransformFeatureMap;
    st.depth = 1;
    st.localization = f.loc_c1;
    st.out_h = st.out_w = f.c1_out;
  } else {
    st.mode = arch == "stn-dl1" ? StMode::TransformInputDeep : StMode::TransformInputShared;
    st.depth = 1;
    st.localization = {f.cls[0], f.cls[1]};
    st.localization.insert(st.localization.end(), f.loc_c1.begin(), f.loc_c1.end());
    st.out_h = st.out_w = f.input_out;
  }
  s.st.push_back(st);
  return s;
}

std::vector<Family> families() {
  std::vector<Family> out;
  const L mp = L::maxpool();
  // Full-size MNIST variants.
  out.push_back({"mnist-r", 28,
                 {L::conv(32, 9), mp, L::conv(32, 7), mp},
                 {L::conv(16, 9), mp, L::conv(32, 7), mp},
                 {L::fc(32), L::fc(16), L::fc(16)},
                 {L::fc(16), L::fc(16), L::fc(16)},
                 0, 0, 0});
  out.push_back({"mnist-t", 60,
                 {L::conv(21, 9), mp, L::conv(32, 7), mp},
                 {L::conv(16, 9), mp, L::conv(32, 7), mp},
                 {L::conv(20, 5), mp, L::conv(20, 5), mp, L::fc(10)},
                 {L::conv(20, 5), mp, L::conv(20, 5, false), L::fc(20)},
                 30, 13, 30});
  out.push_back({"mnist-s", 112,
                 {L::conv(23, 9), mp, L::conv(21, 7), mp},
                 {L::conv(16, 9), mp, L::conv(16, 7), mp},
                 {L::avgpool(), L::conv(16, 5), mp, L::conv(16, 5), mp, L::fc(16)},
                 {L::conv(16, 5), mp, L::conv(16, 5), mp, L::fc(16)},
                 0, 0, 0});
  // Reduced-width variants for quick runs.
  out.push_back({"desk-r", 28,
                 {L::conv(12, 9), mp, L::conv(16, 7), mp},
                 {L::conv(8, 9), mp, L::conv(16, 7), mp},
                 {L::fc(16), L::fc(8)},
                 {L::fc(16), L::fc(8)},
                 0, 0, 0});
  out.push_back({"desk-t", 60,
                 {L::conv(8, 9), mp, L::conv(16, 7), mp},
                 {L::conv(8, 9), mp, L::conv(16, 7), mp},
                 {L::conv(8, 5), mp, L::conv(8, 5), mp, L::fc(8)},
                 {L::conv(8, 5), mp, L::conv(8, 5, false), L::fc(8)},
                 30, 13, 30});
  out.push_back({"desk-s", 112,
                 {L::conv(8, 9), mp, L::conv(8, 7), mp},
                 {L::conv(8, 9), mp, L::conv(8, 7), mp},
                 {L::avgpool(), L::conv(8, 5), mp, L::conv(8, 5), mp, L::fc(8)},
                 {L::conv(8, 5), mp, L::conv(8, 5), mp, L::fc(8)},
                 0, 0, 0});
  return out;
}

const char* kArchs[] = {"cnn", "stn-c0", "stn-c1", "stn-dl1", "stn-sl1"};

LayerSpec padded(std::size_t filters, std::size_t k) {
  LayerSpec l = L::conv(filters, k);
  l.padding = k / 2;
  return l;
}

// Street-number and plankton networks: representable and countable; their
// padded convolutions, 3x3 pooling and multi-digit heads are not executable.
std::map<std::string, ArchitectureSpec> large_specs() {
  std::map<std::string, ArchitectureSpec> out;
  const L mp = L::maxpool();
  const L drop = L::dropout(0.5);
  ArchitectureSpec svhn;
  svhn.in_channels = 3;
  svhn.in_h = svhn.in_w = 64;
  svhn.num_classes = 11;
  svhn.heads = 5;
  svhn.classification = {padded(48, 5), mp, padded(64, 5), drop, padded(128, 5), mp, drop,
                         padded(160, 5), drop, padded(192, 5), mp, drop, padded(192, 5), drop,
                         padded(192, 5), mp, drop, padded(192, 5), drop, L::fc(3072), drop,
                         L::fc(3072), drop, L::fc(3072), drop};
  auto with = [&](const std::string& name, std::vector<StInsertion> sts) {
    ArchitectureSpec s = svhn;
    s.name = name;
    for (auto& st : sts) {
      st.boundary = BoundaryPolicy::ZeroFill;
      st.identity_offset = true;
    }
    s.st = std::move(sts);
    out[name] = s;
  };
  with("svhn/cnn", {});
  {
    StInsertion st;
    st.localization = {padded(32, 5), mp, padded(32, 5), L::fc(32), L::fc(32)};
    with("svhn/stn-c0-large", {st});
  }
  {
    std::vector<StInsertion> sts;
    for (std::size_t d = 0; d < 4; ++d) {
      StInsertion st;
      st.mode = StMode::TransformFeatureMap;
      st.depth = d;
      st.localization = {L::fc(32), L::fc(32)};
      sts.push_back(st);
    }
    with("svhn/stn-c0123", sts);
    std::vector<StInsertion> shared;
    StInsertion first;
    first.localization = {L::fc(32), L::fc(32)};
    shared.push_back(first);
    for (std::size_t d = 1; d < 4; ++d) {
      StInsertion st;
      st.mode = StMode::TransformInputShared;
      st.depth = d;
      const std::size_t p = depth_position(svhn.classification, d);
      st.localization.assign(svhn.classification.begin(), svhn.classification.begin() + static_cast<std::ptrdiff_t>(p));
      st.localization.push_back(L::fc(32));
      st.localization.push_back(L::fc(32));
      shared.push_back(st);
    }
    with("svhn/stn-sl0123", shared);
  }
  ArchitectureSpec pk;
  pk.in_h = pk.in_w = 95;
  pk.num_classes = 121;
  pk.activation = Activation::LeakyRelu;
  LayerSpec mp3 = L::maxpool();
  mp3.window = 3;
  pk.classification = {padded(32, 3), padded(32, 3), mp3, padded(64, 3), padded(64, 3), mp3,
                       padded(128, 3), padded(128, 3), padded(128, 3), mp3, padded(256, 3),
                       padded(256, 3), padded(256, 3), mp3, drop, L::fc(512), drop, L::fc(512), drop};
  pk.name = "plankton/cnn";
  out[pk.name] = pk;
  ArchitectureSpec pk0 = pk;
  pk0.name = "plankton/stn-c0";
  StInsertion st;
  st.localization = {L::fc(64), L::fc(64)};
  pk0.st.push_back(st);
  out[pk0.name] = pk0;
  return out;
}

const std::map<std::string, ArchitectureSpec>& catalog() {
  static const std::map<std::string, ArchitectureSpec> c = [] {
    std::map<std::string, ArchitectureSpec> m;
    for (const Family& f : families())
      for (const char* a : kArchs) {
        ArchitectureSpec s = make(f, a);
        m[s.name] = s;
      }
    // Two-iteration variants for the rotation task.
    for (const char* base : {"mnist-r/stn-c0", "mnist-r/stn-sl1", "desk-r/stn-c0", "desk-r/stn-sl1"}) {
      ArchitectureSpec s = m.at(base);
      s.name += "-iter2";
      s.st[0].iterations = 2;
      m[s.name] = s;
    }
    for (auto& [k, v] : large_specs()) m[k] = v;
    for (auto& [k, v] : m) validate(v);
    return m;
  }();
  return c;
}

}  // namespace

std::vector<std::string> builtin_spec_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : catalog()) out.push_back(k);
  return out;
}

ArchitectureSpec builtin_spec(std::string_view name) {
  const auto& c = catalog();
  auto it = c.find(std::string(name));
  if (it == c.end()) {
    std::string names;
    for (const auto& [k, v] : c) names += (names.empty() ? "" : ", ") + k;
    throw ValidationError("unknown architecture '" + std::string(name) + "'; valid names: " + names);
  }
  return it->second;
}

ArchitectureSpec resolve_spec(const std::string& name_or_path) {
  if (catalog().count(name_or_path)) return builtin_spec(name_or_path);
  std::ifstream f(name_or_path);
  if (!f) return builtin_spec(name_or_path);  // reports the catalog
  std::stringstream ss;
  ss << f.rdbuf();
  return spec_from_json(ss.str());
}

}  // namespace stnlab
