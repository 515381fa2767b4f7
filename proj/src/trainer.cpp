#include "stnlab/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stnlab/sgd.hpp"

namespace stnlab {

namespace {

// Stream tags for the derived random streams of a run.
enum : std::uint64_t { kTagBatch = 1, kTagData = 2, kTagDropout = 3, kTagNorm = 4, kTagInit = 5 };

}  // namespace

std::size_t TrainConfig::total_iterations() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.iterations;
  return n;
}

double default_learning_rate(Variant v) { return v == Variant::T ? 0.01 : 0.02; }

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (cfg.stages.empty()) throw ValidationError("training needs at least one stage");
  for (const auto& s : cfg.stages)
    if (!(s.lr_factor > 0)) throw ValidationError("stage learning-rate factors must be positive");
  if (!(cfg.learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (!(cfg.loc_multiplier > 0)) throw ValidationError("loc_multiplier must be positive");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw ValidationError("momentum must be in [0, 1)");
  if (!(cfg.l2 >= 0)) throw ValidationError("l2 must be >= 0");
  if (cfg.train_subset == 0) throw ValidationError("train_subset must be positive");
  if (cfg.log_every == 0) throw ValidationError("log_every must be positive");
  if (cfg.variant == Variant::Plain) throw ValidationError("training needs a perturbed variant (R, T or S)");
  validate_executable(cfg.spec);
}

Normalization training_normalization(const LabeledImageSet& plain_train, Variant v, std::uint64_t seed) {
  // Two streaming passes over a deterministic perturbed copy, in chunks so
  // large canvases never materialize at once.
  const std::uint64_t key = Rng::derive(seed, {kTagNorm});
  const std::size_t n = plain_train.size(), chunk = 256;
  auto for_chunks = [&](auto&& fn) {
    for (std::size_t b = 0; b < n; b += chunk) {
      std::vector<std::size_t> idx;
      std::vector<std::uint64_t> ids;
      for (std::size_t i = b; i < std::min(n, b + chunk); ++i) {
        idx.push_back(i);
        ids.push_back(i);
      }
      fn(synthesize_subset(v, plain_train, key, idx, ids).images.values());
    }
  };
  double sum = 0, count = 0;
  for_chunks([&](std::span<const float> px) {
    for (float x : px) sum += x;
    count += static_cast<double>(px.size());
  });
  const double mean = sum / count;
  double ss = 0;
  for_chunks([&](std::span<const float> px) {
    for (float x : px) ss += (x - mean) * (x - mean);
  });
  const double sd = std::sqrt(ss / count);
  if (!(sd > 0)) throw ValueError("cannot normalize: pixel variance is zero");
  return {true, mean, sd};
}

TrainResult train(const TrainConfig& cfg, const LabeledImageSet& plain_train, const StepCallback& on_log) {
  validate(cfg);
  const LabeledImageSet src = take(plain_train, cfg.train_subset);
  TrainResult res;
  res.net = std::make_unique<Network<float>>(cfg.spec, Rng::derive(cfg.seed, {kTagInit}));
  res.normalization = training_normalization(src, cfg.variant, cfg.seed);
  Network<float>& net = *res.net;

  std::vector<ParamGroupEntry> groups;
  for (const auto& p : net.params()) {
    const bool own_loc = p.localization && !p.shared;
    if (own_loc && cfg.freeze_localization) continue;
    groups.push_back({p.tensor, own_loc ? cfg.loc_multiplier : 1.0});
  }
  SgdState sgd(cfg.learning_rate, cfg.momentum, cfg.nesterov, cfg.l2);
  const std::uint64_t data_key = Rng::derive(cfg.seed, {kTagData});

  std::size_t step = 0;
  double window = 0;
  std::size_t window_n = 0;
  for (const auto& stage : cfg.stages) {
    sgd.set_learning_rate(cfg.learning_rate * stage.lr_factor);
    for (std::size_t it = 0; it < stage.iterations; ++it, ++step) {
      Rng pick(Rng::derive(cfg.seed, {kTagBatch, step}));
      std::vector<std::size_t> idx(cfg.batch_size);
      std::vector<std::uint64_t> ids(cfg.batch_size);
      for (std::size_t j = 0; j < cfg.batch_size; ++j) {
        idx[j] = pick.below(src.size());
        ids[j] = step * cfg.batch_size + j;
      }
      LabeledImageSet batch = synthesize_subset(cfg.variant, src, data_key, idx, ids);
      apply_normalization(batch, res.normalization);
      std::vector<int> labels(batch.labels.begin(), batch.labels.end());

      Rng drop(Rng::derive(cfg.seed, {kTagDropout, step}));
      Graph<float> g;
      const NodeId x = g.input(std::move(batch.images));
      ForwardOptions fo;
      fo.train = true;
      fo.rng = &drop;
      const ForwardResult fr = net.forward(g, x, fo);
      const NodeId loss = g.softmax_cross_entropy(fr.logits, labels);
      const double l = g.value(loss)[0];
      if (!std::isfinite(l))
        throw DivergenceError(step + 1, "training diverged at step " + std::to_string(step + 1) +
                                            " (loss is not finite)");
      g.backward(loss);
      if (cfg.freeze_localization)
        for (const auto& p : net.params())
          if (p.localization && !p.shared) p.tensor->drop_grad();
      sgd.step(groups);
      window += l;
      ++window_n;
      if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.total_iterations()) {
        LogEntry e{step + 1, window / static_cast<double>(window_n), sgd.learning_rate()};
        res.log.push_back(e);
        if (on_log) on_log(e);
        window = 0;
        window_n = 0;
      }
    }
  }
  for (const auto& p : net.params()) p.tensor->drop_grad();
  return res;
}

LabeledImageSet make_eval_set(const LabeledImageSet& plain_test, Variant v, std::uint64_t seed,
                              std::size_t transforms, const Normalization& norm) {
  SynthOptions opt;
  opt.copies = transforms;
  LabeledImageSet set = synthesize(v, plain_test, seed, opt);
  apply_normalization(set, norm);
  return set;
}

PoseKind pose_kind_for(Variant v) {
  switch (v) {
    case Variant::R: return PoseKind::Rotation;
    case Variant::T: return PoseKind::Translation;
    case Variant::S: return PoseKind::Scale;
    case Variant::Plain: break;
  }
  throw ValueError("plain data has no perturbation to measure");
}

EvalReport evaluate(const BatchPredictor& predictor, const LabeledImageSet& eval_set, const EvalOptions& opt) {
  if (eval_set.size() == 0) throw ValueError("evaluation set is empty");
  if (opt.batch_size == 0) throw ValueError("evaluation batch size must be positive");
  EvalReport rep;
  rep.samples = eval_set.size();
  const std::size_t per = eval_set.images.size() / eval_set.size();
  Shape shape = eval_set.images.shape();
  std::size_t wrong = 0;
  double det_sum = 0;
  bool have_theta = false;
  for (std::size_t b = 0; b < eval_set.size(); b += opt.batch_size) {
    const std::size_t n = std::min(opt.batch_size, eval_set.size() - b);
    shape[0] = n;
    Tensor<float> imgs(shape, std::vector<float>(eval_set.images.data() + b * per,
                                                 eval_set.images.data() + (b + n) * per));
    std::span<const std::uint8_t> labels(eval_set.labels.data() + b, n);
    const BatchOutput out = predictor(imgs, labels);
    if (out.logits.rank() != 2 || out.logits.dim(0) != n)
      throw DimensionError("predictor returned logits " + shape_str(out.logits.shape()) + " for " +
                           std::to_string(n) + " images");
    const std::size_t k = out.logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = out.logits.data() + i * k;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      if (pred != labels[i]) ++wrong;
    }
    if (!out.theta) continue;
    if (out.theta->size() != n) throw DimensionError("predictor returned the wrong number of transforms");
    have_theta = true;
    for (std::size_t i = 0; i < n; ++i) {
      const AffineTransform& a = (*out.theta)[i];
      det_sum += a.det();
      if (eval_set.variant == Variant::Plain) continue;
      PoseRecord r;
      r.label = labels[i];
      r.kind = pose_kind_for(eval_set.variant);
      r.theta = eval_set.perturbations[b + i];
      try {
        r.theta_prime = compensation_of(r.kind, a, opt.pixel_scale);
      } catch (const ValueError&) {
        // Reflections or a vanishing similarity part have no angle/scale;
        // such samples are counted and measured by |det| or as 0.
        ++rep.degenerate;
        r.theta_prime = {r.kind == PoseKind::Scale ? -std::log2(std::abs(a.det()) + 1e-300) : 0.0, 0.0};
      }
      rep.records.push_back(r);
      rep.heatmap.push_back({r.theta[0], -r.theta_prime[0]});
    }
  }
  rep.error_pct = 100.0 * static_cast<double>(wrong) / static_cast<double>(eval_set.size());
  if (have_theta) rep.mean_det = det_sum / static_cast<double>(eval_set.size());
  if (!rep.records.empty()) {
    rep.pose = pose_summary(rep.records);
    try {
      rep.heatmap_fit = orthogonal_regression(rep.heatmap);
    } catch (const ValueError&) {
    }
  }
  return rep;
}

EvalReport evaluate(const Network<float>& net, const LabeledImageSet& eval_set, std::size_t batch_size) {
  EvalOptions opt;
  opt.batch_size = batch_size;
  const bool has_st = !net.spec().st.empty();
  // Perfect compensation of a shift by +d reads back as +d from the grid
  // matrix, so the sign is flipped to make theta + theta' vanish.
  if (has_st) opt.pixel_scale = -effective_pixel_scale(net.spec(), 0);
  BatchPredictor pred = [&](const Tensor<float>& imgs, std::span<const std::uint8_t>) {
    auto p = net.predict(imgs);
    BatchOutput out{std::move(p.logits), std::nullopt};
    if (has_st) {
      const Tensor<float>& th = p.theta[0];
      std::vector<AffineTransform> ts(th.dim(0));
      for (std::size_t i = 0; i < ts.size(); ++i)
        for (int j = 0; j < 6; ++j) ts[i].m[j] = th[6 * i + j];
      out.theta = std::move(ts);
    }
    return out;
  };
  return evaluate(pred, eval_set, opt);
}

std::size_t median_model_index(const std::vector<double>& pose_spread) {
  if (pose_spread.empty()) throw ValueError("median_model_index: no runs");
  std::vector<std::size_t> order(pose_spread.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pose_spread[a] < pose_spread[b]; });
  return order[(order.size() - 1) / 2];
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename U>
void put(std::vector<std::uint8_t>& b, U v) {
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
  b.insert(b.end(), raw, raw + sizeof(U));
}

struct Cursor {
  const std::vector<std::uint8_t>& b;
  std::size_t off = 0;
  template <typename U>
  U get() {
    if (off + sizeof(U) > b.size()) throw FormatError("truncated checkpoint");
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, b.data() + off, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    off += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::string str(std::size_t n) {
    if (off + n > b.size()) throw FormatError("truncated checkpoint");
    std::string s(b.begin() + static_cast<std::ptrdiff_t>(off), b.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net, const Normalization& norm, Variant v) {
  std::vector<std::uint8_t> b(kMagic, kMagic + 4);
  put<std::uint16_t>(b, kVersion);
  put<std::uint16_t>(b, static_cast<std::uint16_t>(v));
  put<std::uint64_t>(b, spec_hash(net.spec()));
  const std::string js = spec_to_json(net.spec(), -1);
  put<std::uint32_t>(b, static_cast<std::uint32_t>(js.size()));
  b.insert(b.end(), js.begin(), js.end());
  put<std::uint8_t>(b, norm.applied ? 1 : 0);
  put<double>(b, norm.mean);
  put<double>(b, norm.std);
  put<std::uint32_t>(b, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    put<std::uint16_t>(b, static_cast<std::uint16_t>(p.name.size()));
    b.insert(b.end(), p.name.begin(), p.name.end());
    put<std::uint8_t>(b, static_cast<std::uint8_t>(p.tensor->rank()));
    for (std::size_t d : p.tensor->shape()) put<std::uint32_t>(b, static_cast<std::uint32_t>(d));
    for (float x : p.tensor->values()) put<float>(b, x);
  }
  put<std::uint64_t>(b, fnv1a64(b.data(), b.size()));
  return b;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ArchitectureSpec* expected) {
  if (bytes.size() < 4 + 2 + 2 + 8 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  {
    Cursor t{bytes, bytes.size() - 8};
    if (t.get<std::uint64_t>() != fnv1a64(bytes.data(), bytes.size() - 8))
      throw FormatError("checkpoint checksum mismatch (corrupt file)");
  }
  Cursor c{bytes, 4};
  if (c.get<std::uint16_t>() != kVersion) throw FormatError("unsupported checkpoint version");
  const auto variant = c.get<std::uint16_t>();
  if (variant > 3) throw FormatError("bad variant id in checkpoint");
  const std::uint64_t hash = c.get<std::uint64_t>();
  if (expected && spec_hash(*expected) != hash)
    throw ValidationError("checkpoint was written for a different architecture (spec hash " + hex64(hash) +
                          ", expected " + hex64(spec_hash(*expected)) + ")");
  const std::string js = c.str(c.get<std::uint32_t>());
  ArchitectureSpec spec = spec_from_json(js);
  if (spec_hash(spec) != hash) throw FormatError("checkpoint spec does not match its hash");
  Checkpoint ck;
  ck.variant = static_cast<Variant>(variant);
  ck.normalization.applied = c.get<std::uint8_t>() != 0;
  ck.normalization.mean = c.get<double>();
  ck.normalization.std = c.get<double>();
  ck.net = std::make_unique<Network<float>>(spec, 0);
  const std::size_t count = c.get<std::uint32_t>();
  if (count != ck.net->params().size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, network has " +
                      std::to_string(ck.net->params().size()));
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name = c.str(c.get<std::uint16_t>());
    if (!ck.net->has_tensor(name)) throw FormatError("checkpoint tensor '" + name + "' unknown to the network");
    Tensor<float>& t = ck.net->tensor(name);
    const std::size_t rank = c.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = c.get<std::uint32_t>();
    if (shape != t.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(t.shape()));
    for (float& x : t.values()) x = c.get<float>();
  }
  if (c.off != bytes.size() - 8) throw FormatError("trailing bytes in checkpoint");
  return ck;
}

void checkpoint_save(const Network<float>& net, const Normalization& norm, Variant v,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net, norm, v);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path, const ArchitectureSpec* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected);
}

}  // namespace stnlab
