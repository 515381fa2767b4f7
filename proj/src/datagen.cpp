#include "stnlab/datagen.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>

#include "stnlab/rng.hpp"
#include "stnlab/warp.hpp"

namespace stnlab {

namespace fs = std::filesystem;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Plain: return "plain";
    case Variant::R: return "R";
    case Variant::T: return "T";
    case Variant::S: return "S";
  }
  return "unknown";
}

Variant parse_variant(std::string_view s) {
  if (s == "plain" || s == "P") return Variant::Plain;
  if (s == "R" || s == "r" || s == "rotation") return Variant::R;
  if (s == "T" || s == "t" || s == "translation") return Variant::T;
  if (s == "S" || s == "s" || s == "scale") return Variant::S;
  throw ValueError("unknown dataset variant '" + std::string(s) + "' (expected R, T, S or plain)");
}

namespace {

std::vector<std::uint8_t> read_maybe_gz(const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("file not found: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path.string());
  std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(f, gzclose);
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) throw FormatError("corrupt compressed stream in " + path.string());
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void require(const std::vector<std::uint8_t>& b, std::size_t need, const fs::path& p) {
  if (b.size() < need)
    throw FormatError("truncated IDX file " + p.string() + ": " + std::to_string(b.size()) +
                      " bytes, need " + std::to_string(need));
}

fs::path find_file(const fs::path& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    fs::path p = dir / (stem + suffix);
    if (fs::exists(p)) return p;
  }
  throw FormatError("missing " + stem + "[.gz] in " + dir.string() +
                    " (set --data-dir or STN_LAB_DATA_DIR)");
}

// Bilinear reads with zeros outside the source plane.
float read_zero(const float* plane, std::size_t h, std::size_t w, double sx, double sy) {
  return sample_point<float>(plane, h, w, sx, sy, BoundaryPolicy::ZeroFill);
}

std::array<double, 2> draw_perturbation(Variant v, Rng& rng, const SynthOptions& opt) {
  switch (v) {
    case Variant::R: {
      const double a = rng.uniform(-kMaxRotation, kMaxRotation);
      return {opt.forced_angle.value_or(a), 0};
    }
    case Variant::T: {
      const double x = rng.uniform(-kMaxOffset, kMaxOffset);
      const double y = rng.uniform(-kMaxOffset, kMaxOffset);
      return opt.forced_offset.value_or(std::array<double, 2>{x, y});
    }
    case Variant::S: {
      const double s = std::exp2(rng.uniform(std::log2(kMinScale), std::log2(kMaxScale)));
      const double f = opt.forced_scale.value_or(s);
      if (!(f > 0)) throw ValueError("scale factor must be positive");
      return {f, 0};
    }
    case Variant::Plain: break;
  }
  return {0, 0};
}

void add_clutter(const LabeledImageSet& src, Variant v, Rng& rng, int count, float* canvas,
                 std::size_t side, std::vector<ClutterFragment>& record) {
  const std::size_t h = src.height(), w = src.width();
  const std::size_t n = src.size();
  for (int k = 0; k < count; ++k) {
    ClutterFragment f;
    f.source_index = static_cast<std::uint32_t>(rng.below(n));
    f.src_x = static_cast<int>(rng.below(w - 5));
    f.src_y = static_cast<int>(rng.below(h - 5));
    if (v == Variant::S) {
      f.scale = std::exp2(rng.uniform(std::log2(kMinScale), std::log2(kMaxScale)));
      f.extent = static_cast<int>(std::ceil(6.0 * f.scale - 1e-12));
    }
    f.dst_x = static_cast<int>(rng.below(side - static_cast<std::size_t>(f.extent) + 1));
    f.dst_y = static_cast<int>(rng.below(side - static_cast<std::size_t>(f.extent) + 1));
    float patch[36];
    const float* img = src.images.data() + static_cast<std::size_t>(f.source_index) * h * w;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) patch[y * 6 + x] = img[(f.src_y + y) * w + f.src_x + x];
    for (int a = 0; a < f.extent; ++a)
      for (int b = 0; b < f.extent; ++b) {
        float val;
        if (v == Variant::S) {
          const double u = (b + 0.5) / f.scale - 0.5, vv = (a + 0.5) / f.scale - 0.5;
          val = read_zero(patch, 6, 6, u, vv);
        } else {
          val = patch[a * 6 + b];
        }
        canvas[(f.dst_y + a) * side + f.dst_x + b] += val;
      }
    record.push_back(f);
  }
}

void synth_one(Variant v, const LabeledImageSet& src, std::size_t i, Rng& rng,
               const SynthOptions& opt, float* out, std::array<double, 2>& pert,
               std::vector<ClutterFragment>& clutter) {
  const std::size_t h = src.height(), w = src.width();
  const float* digit = src.images.data() + i * h * w;
  const std::array<double, 2> p = draw_perturbation(v, rng, opt);
  switch (v) {
    case Variant::Plain:
      std::copy(digit, digit + h * w, out);
      pert = {0, 0};
      return;
    case Variant::R: {
      const SamplingGrid grid = affine_grid(AffineTransform::rotation(-p[0]), h, w);
      bilinear_sample<float>(std::span<const float>(digit, h * w), 1, h, w, grid,
                             BoundaryPolicy::ZeroFill, std::span<float>(out, h * w));
      pert = p;
      return;
    }
    case Variant::T: {
      const std::size_t side = kTranslatedSize;
      const double x0 = 0.5 * static_cast<double>(side - w), y0 = 0.5 * static_cast<double>(side - h);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          out[y * side + x] = read_zero(digit, h, w, static_cast<double>(x) - x0 - p[0],
                                        static_cast<double>(y) - y0 - p[1]);
      add_clutter(src, v, rng, opt.clutter, out, side, clutter);
      for (std::size_t k = 0; k < side * side; ++k) out[k] = std::clamp(out[k], 0.0f, 1.0f);
      pert = p;
      return;
    }
    case Variant::S: {
      const std::size_t side = kScaledSize;
      const double s = p[0];
      if (s * static_cast<double>(std::max(h, w)) > static_cast<double>(side) + 1e-9)
        throw ValueError("scaled digit (" + std::to_string(s) + "x) exceeds the " +
                         std::to_string(side) + "-pixel canvas");
      const double c = 0.5 * static_cast<double>(side - 1);
      const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          out[y * side + x] = read_zero(digit, h, w, (static_cast<double>(x) - c) / s + cx,
                                        (static_cast<double>(y) - c) / s + cy);
      add_clutter(src, v, rng, opt.clutter, out, side, clutter);
      for (std::size_t k = 0; k < side * side; ++k) out[k] = std::clamp(out[k], 0.0f, 1.0f);
      pert = {2.0 * std::log2(s), 0};
      return;
    }
  }
}

std::size_t canvas_side(Variant v, std::size_t src_side) {
  if (v == Variant::T) return kTranslatedSize;
  if (v == Variant::S) return kScaledSize;
  return src_side;
}

}  // namespace

LabeledImageSet load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto ib = read_maybe_gz(images_path);
  const auto lb = read_maybe_gz(labels_path);
  require(ib, 16, images_path);
  require(lb, 8, labels_path);
  if (be32(ib, 0) != 2051)
    throw FormatError("bad IDX image magic " + std::to_string(be32(ib, 0)) + " in " +
                      images_path.string() + " (expected 2051)");
  if (be32(lb, 0) != 2049)
    throw FormatError("bad IDX label magic " + std::to_string(be32(lb, 0)) + " in " +
                      labels_path.string() + " (expected 2049)");
  const std::size_t n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl)
    throw FormatError("image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(nl));
  if (n == 0 || h == 0 || w == 0) throw FormatError("IDX file declares an empty set");
  require(ib, 16 + n * h * w, images_path);
  require(lb, 8 + n, labels_path);
  LabeledImageSet set;
  set.images = Tensor<float>({n, 1, h, w});
  for (std::size_t k = 0; k < n * h * w; ++k) set.images[k] = static_cast<float>(ib[16 + k]) / 255.0f;
  set.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  for (std::size_t k = 0; k < n; ++k)
    if (set.labels[k] > 9)
      throw FormatError("label " + std::to_string(set.labels[k]) + " at index " + std::to_string(k) +
                        " outside [0, 9]");
  set.perturbations.assign(n, {0, 0});
  set.clutter.assign(n, {});
  return set;
}

LabeledImageSet take(const LabeledImageSet& set, std::size_t n) {
  n = std::min(n, set.size());
  if (n == set.size()) return set;
  if (n == 0) throw ValueError("take: empty subset");
  const std::size_t per = set.images.size() / set.size();
  LabeledImageSet out;
  Shape shape = set.images.shape();
  shape[0] = n;
  out.images = Tensor<float>(shape, std::vector<float>(set.images.data(), set.images.data() + n * per));
  out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(n));
  out.perturbations.assign(set.perturbations.begin(), set.perturbations.begin() + static_cast<std::ptrdiff_t>(n));
  out.clutter.assign(set.clutter.begin(), set.clutter.begin() + static_cast<std::ptrdiff_t>(n));
  out.variant = set.variant;
  out.normalization = set.normalization;
  return out;
}

MnistFiles locate_mnist(const std::string& dir_flag) {
  fs::path dir;
  if (!dir_flag.empty()) {
    dir = dir_flag;
  } else if (const char* env = std::getenv("STN_LAB_DATA_DIR"); env && *env) {
    dir = env;
  } else {
#ifdef STNLAB_DEFAULT_DATA_DIR
    dir = STNLAB_DEFAULT_DATA_DIR;
#else
    throw FormatError("no data directory: pass --data-dir or set STN_LAB_DATA_DIR");
#endif
  }
  if (!fs::is_directory(dir)) throw FormatError("data directory not found: " + dir.string());
  return {find_file(dir, "train-images-idx3-ubyte"), find_file(dir, "train-labels-idx1-ubyte"),
          find_file(dir, "t10k-images-idx3-ubyte"), find_file(dir, "t10k-labels-idx1-ubyte")};
}

LabeledImageSet synthesize_subset(Variant v, const LabeledImageSet& src, std::uint64_t seed,
                                  const std::vector<std::size_t>& indices,
                                  const std::vector<std::uint64_t>& stream_ids,
                                  const SynthOptions& opt) {
  if (src.variant != Variant::Plain || src.normalization.applied)
    throw ValueError("synthesis needs an unnormalized plain source set");
  if (indices.size() != stream_ids.size()) throw DimensionError("indices/stream ids size mismatch");
  if (indices.empty()) throw ValueError("synthesize_subset: no images requested");
  if (opt.clutter < 0) throw ValueError("clutter count must be >= 0");
  const std::size_t side_h = canvas_side(v, src.height()), side_w = canvas_side(v, src.width());
  LabeledImageSet out;
  out.variant = v;
  out.images = Tensor<float>({indices.size(), 1, side_h, side_w});
  out.labels.resize(indices.size());
  out.perturbations.resize(indices.size());
  out.clutter.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= src.size()) throw ValueError("source index out of range");
    Rng rng(Rng::derive(seed, {static_cast<std::uint64_t>(v), stream_ids[k]}));
    synth_one(v, src, i, rng, opt, out.images.data() + k * side_h * side_w, out.perturbations[k],
              out.clutter[k]);
    out.labels[k] = src.labels[i];
  }
  return out;
}

LabeledImageSet synthesize(Variant v, const LabeledImageSet& src, std::uint64_t seed,
                           const SynthOptions& opt) {
  if (opt.copies == 0) throw ValueError("copies must be >= 1");
  std::vector<std::size_t> idx;
  std::vector<std::uint64_t> ids;
  idx.reserve(src.size() * opt.copies);
  for (std::size_t i = 0; i < src.size(); ++i)
    for (std::size_t j = 0; j < opt.copies; ++j) {
      ids.push_back(idx.size());
      idx.push_back(i);
    }
  return synthesize_subset(v, src, seed, idx, ids, opt);
}

LabeledImageSet synth_rotated(const LabeledImageSet& src, std::uint64_t seed, const SynthOptions& opt) {
  return synthesize(Variant::R, src, seed, opt);
}

LabeledImageSet synth_translated(const LabeledImageSet& src, std::uint64_t seed,
                                 const SynthOptions& opt) {
  return synthesize(Variant::T, src, seed, opt);
}

LabeledImageSet synth_scaled(const LabeledImageSet& src, std::uint64_t seed, const SynthOptions& opt) {
  return synthesize(Variant::S, src, seed, opt);
}

Normalization compute_normalization(const LabeledImageSet& set) {
  std::span<const float> v = set.images.values();
  double s = 0;
  for (float x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (float x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  if (!(sd > 0)) throw ValueError("cannot normalize: pixel variance is zero");
  return {true, mean, sd};
}

void apply_normalization(LabeledImageSet& set, const Normalization& stats) {
  if (!(stats.std > 0)) throw ValueError("normalization std must be positive");
  Normalization target = stats;
  target.applied = true;
  if (set.normalization.applied) {
    if (set.normalization == target) return;
    throw StateError("set already normalized with different statistics");
  }
  for (float& x : set.images.values())
    x = static_cast<float>((static_cast<double>(x) - stats.mean) / stats.std);
  set.normalization = target;
}

Normalization normalize(LabeledImageSet& set) {
  if (set.normalization.applied) return set.normalization;
  const Normalization s = compute_normalization(set);
  apply_normalization(set, s);
  return s;
}

namespace {

constexpr char kCacheMagic[4] = {'S', 'T', 'N', 'L'};
constexpr std::uint16_t kCacheVersion = 1;

struct Writer {
  std::vector<std::uint8_t> b;
  template <typename U>
  void le(U v) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    b.insert(b.end(), raw, raw + sizeof(U));
  }
};

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t off = 0;
  template <typename U>
  U le() {
    if (off + sizeof(U) > b.size()) throw FormatError("truncated dataset cache");
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, b.data() + off, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    off += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_cache(const LabeledImageSet& set) {
  if (set.images.dim(1) != 1) throw DimensionError("cache holds single-channel images only");
  if (set.height() > 0xFFFF || set.width() > 0xFFFF || set.size() > 0xFFFFFFFFu)
    throw DimensionError("set too large for the cache header");
  Writer w;
  w.b.insert(w.b.end(), kCacheMagic, kCacheMagic + 4);
  w.le<std::uint16_t>(kCacheVersion);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(set.variant));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(set.size()));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(set.height()));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(set.width()));
  for (float x : set.images.values()) w.le<float>(x);
  w.b.insert(w.b.end(), set.labels.begin(), set.labels.end());
  for (const auto& p : set.perturbations) {
    w.le<double>(p[0]);
    w.le<double>(p[1]);
  }
  w.le<std::uint8_t>(set.normalization.applied ? 1 : 0);
  w.le<double>(set.normalization.mean);
  w.le<double>(set.normalization.std);
  w.le<std::uint64_t>(fnv1a64(w.b.data(), w.b.size()));
  return w.b;
}

LabeledImageSet decode_cache(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kCacheMagic, 4) != 0)
    throw FormatError("not a dataset cache (bad magic)");
  Reader r{bytes, 4};
  if (r.le<std::uint16_t>() != kCacheVersion) throw FormatError("unsupported dataset cache version");
  const auto variant = r.le<std::uint16_t>();
  if (variant > 3) throw FormatError("bad variant id in dataset cache");
  const std::size_t n = r.le<std::uint32_t>(), h = r.le<std::uint16_t>(), w = r.le<std::uint16_t>();
  if (n == 0 || h == 0 || w == 0) throw FormatError("dataset cache declares an empty set");
  const std::size_t expect = 16 + n * h * w * 4 + n + n * 16 + 17 + 8;
  if (bytes.size() != expect) throw FormatError("dataset cache has wrong length (truncated or padded)");
  const std::uint64_t stored = [&] {
    Reader t{bytes, bytes.size() - 8};
    return t.le<std::uint64_t>();
  }();
  if (stored != fnv1a64(bytes.data(), bytes.size() - 8)) throw FormatError("dataset cache checksum mismatch");
  LabeledImageSet set;
  set.variant = static_cast<Variant>(variant);
  set.images = Tensor<float>({n, 1, h, w});
  for (float& x : set.images.values()) x = r.le<float>();
  set.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.off),
                    bytes.begin() + static_cast<std::ptrdiff_t>(r.off + n));
  r.off += n;
  set.perturbations.resize(n);
  for (auto& p : set.perturbations) {
    p[0] = r.le<double>();
    p[1] = r.le<double>();
  }
  set.normalization.applied = r.le<std::uint8_t>() != 0;
  set.normalization.mean = r.le<double>();
  set.normalization.std = r.le<double>();
  set.clutter.assign(n, {});
  return set;
}

void save_cache(const LabeledImageSet& set, const fs::path& path) {
  const auto bytes = encode_cache(set);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path.string());
}

LabeledImageSet load_cache(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open dataset cache " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_cache(bytes);
}

std::uint64_t dataset_checksum(const LabeledImageSet& set) {
  const auto bytes = encode_cache(set);
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 15];
  return s;
}

}  // namespace stnlab
