#include "stnlab/equi_audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stnlab/affine_pose.hpp"
#include "stnlab/kernels.hpp"
#include "stnlab/rng.hpp"

namespace stnlab {

std::string_view group_kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::TranslationInt: return "translation";
    case GroupKind::Rotation: return "rotation";
    case GroupKind::UniformScale: return "scale";
    case GroupKind::GeneralAffine: return "affine";
  }
  return "unknown";
}

GroupKind parse_group_kind(std::string_view s) {
  if (s == "translation") return GroupKind::TranslationInt;
  if (s == "rotation") return GroupKind::Rotation;
  if (s == "scale") return GroupKind::UniformScale;
  if (s == "affine") return GroupKind::GeneralAffine;
  throw ValueError("unknown group '" + std::string(s) + "' (translation, rotation, scale, affine)");
}

TransformGroupElement TransformGroupElement::translation(long dx, long dy) {
  TransformGroupElement g;
  g.kind = GroupKind::TranslationInt;
  g.dx = dx;
  g.dy = dy;
  return g;
}

TransformGroupElement TransformGroupElement::rotation(double degrees) {
  TransformGroupElement g;
  g.kind = GroupKind::Rotation;
  g.degrees = degrees;
  return g;
}

TransformGroupElement TransformGroupElement::uniform_scale(double s) {
  if (!(s > 0)) throw ValueError("scale factor must be positive");
  TransformGroupElement g;
  g.kind = GroupKind::UniformScale;
  g.scale = s;
  return g;
}

TransformGroupElement TransformGroupElement::general(const AffineTransform& m) {
  TransformGroupElement g;
  g.kind = GroupKind::GeneralAffine;
  g.matrix = m;
  g.matrix.frame = Frame::ImageSpace;
  return g;
}

AffineTransform TransformGroupElement::image_matrix(std::size_t h, std::size_t w) const {
  const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
  auto about_center = [&](AffineTransform l) {
    l.m[2] = cx - (l.m[0] * cx + l.m[1] * cy);
    l.m[5] = cy - (l.m[3] * cx + l.m[4] * cy);
    l.frame = Frame::ImageSpace;
    return l;
  };
  switch (kind) {
    case GroupKind::TranslationInt:
      return AffineTransform::translation(static_cast<double>(dx), static_cast<double>(dy), Frame::ImageSpace);
    case GroupKind::Rotation: return about_center(AffineTransform::rotation(degrees));
    case GroupKind::UniformScale: return about_center(AffineTransform::scaling(scale, scale));
    case GroupKind::GeneralAffine: return matrix;
  }
  return AffineTransform::identity(Frame::ImageSpace);
}

double TransformGroupElement::magnitude() const {
  switch (kind) {
    case GroupKind::TranslationInt: return std::hypot(static_cast<double>(dx), static_cast<double>(dy));
    case GroupKind::Rotation: return degrees;
    case GroupKind::UniformScale: return scale;
    case GroupKind::GeneralAffine: return std::abs(matrix.det());
  }
  return 0;
}

ReceptiveField FeatureExtractor::receptive_field() const {
  ReceptiveField rf;
  for (const auto& l : layers) {
    if (l.kind == ExtractorLayer::Kind::Conv) {
      rf.support += (l.kernel.dim(2) - 1) * rf.stride;
    } else if (l.kind == ExtractorLayer::Kind::MaxPool) {
      rf.support += rf.stride;
      rf.stride *= 2;
    }
  }
  return rf;
}

std::size_t FeatureExtractor::out_channels() const {
  std::size_t c = in_channels;
  for (const auto& l : layers)
    if (l.kind == ExtractorLayer::Kind::Conv) c = l.kernel.dim(0);
  return c;
}

Tensor<double> FeatureExtractor::apply(const Tensor<double>& image) const {
  if (image.rank() != 3 || image.dim(0) != in_channels)
    throw DimensionError("extractor expects " + std::to_string(in_channels) + " x H x W, got " +
                         shape_str(image.shape()));
  Tensor<double> x = image;
  for (const auto& l : layers) {
    switch (l.kind) {
      case ExtractorLayer::Kind::Conv: {
        kernels::ConvGeometry g{1, x.dim(0), x.dim(1), x.dim(2), l.kernel.dim(0), l.kernel.dim(2), l.kernel.dim(3)};
        if (l.kernel.dim(1) != g.c || g.h < g.kh || g.w < g.kw)
          throw DimensionError("extractor conv does not fit " + shape_str(x.shape()));
        Tensor<double> y({g.o, g.out_h(), g.out_w()});
        kernels::conv2d_forward<double>(g, x.values(), l.kernel.values(), l.bias, y.values());
        x = std::move(y);
        break;
      }
      case ExtractorLayer::Kind::Relu:
        for (double& v : x.values()) v = std::max(v, 0.0);
        break;
      case ExtractorLayer::Kind::MaxPool: {
        Tensor<double> y({x.dim(0), x.dim(1) / 2, x.dim(2) / 2});
        std::vector<std::uint32_t> arg(y.size());
        kernels::maxpool2x2_forward<double>(x.dim(0), x.dim(1), x.dim(2), x.values(), y.values(), arg);
        x = std::move(y);
        break;
      }
    }
  }
  return x;
}

FeatureExtractor random_extractor(std::uint64_t seed, std::size_t channels, std::size_t kernel) {
  Rng rng(Rng::derive(seed, {0xE0}));
  FeatureExtractor ex;
  auto conv = [&](std::size_t in, std::size_t out) {
    ExtractorLayer l;
    l.kernel = Tensor<double>({out, in, kernel, kernel});
    for (double& v : l.kernel.values()) v = rng.uniform(-1, 1);
    l.bias.resize(out);
    for (double& v : l.bias) v = rng.uniform(-0.1, 0.1);
    return l;
  };
  ExtractorLayer relu{ExtractorLayer::Kind::Relu, {}, {}};
  ExtractorLayer pool{ExtractorLayer::Kind::MaxPool, {}, {}};
  ex.layers = {conv(1, channels), relu, pool, conv(channels, channels), relu};
  return ex;
}

FeatureExtractor mirrored_pair_extractor(std::size_t kernel, std::uint64_t seed) {
  if (kernel < 2) throw ValueError("mirrored pair needs kernel >= 2");
  Rng rng(Rng::derive(seed, {0xE1}));
  const std::size_t kk = kernel * kernel;
  std::vector<double> w(kk);
  // Integer taps; redraw until the filter differs from its half-turn.
  for (;;) {
    for (double& v : w) v = static_cast<double>(static_cast<long>(rng.below(7)) - 3);
    bool symmetric = true;
    for (std::size_t i = 0; i < kk; ++i) symmetric &= w[i] == w[kk - 1 - i];
    if (!symmetric) break;
  }
  ExtractorLayer l;
  l.kernel = Tensor<double>({2, 1, kernel, kernel});
  for (std::size_t i = 0; i < kk; ++i) {
    l.kernel[i] = w[i];
    l.kernel[kk + i] = w[kk - 1 - i];
  }
  FeatureExtractor ex;
  ex.layers = {l};
  return ex;
}

FeatureExtractor isotropic_extractor(const std::vector<double>& sigmas, std::size_t kernel) {
  if (sigmas.empty()) throw ValueError("isotropic extractor needs at least one sigma");
  double smax = 0;
  for (double s : sigmas) {
    if (!(s > 0)) throw ValueError("sigma must be positive");
    smax = std::max(smax, s);
  }
  if (kernel == 0) kernel = 2 * static_cast<std::size_t>(std::ceil(3 * smax)) + 1;
  if (kernel % 2 == 0) throw ValueError("isotropic filters need an odd kernel size");
  const long half = static_cast<long>(kernel / 2);
  ExtractorLayer l;
  l.kernel = Tensor<double>({sigmas.size(), 1, kernel, kernel});
  for (std::size_t c = 0; c < sigmas.size(); ++c) {
    double* k = l.kernel.data() + c * kernel * kernel;
    double sum = 0;
    for (long y = -half; y <= half; ++y)
      for (long x = -half; x <= half; ++x) {
        const double v = std::exp(-static_cast<double>(x * x + y * y) / (2 * sigmas[c] * sigmas[c]));
        k[(y + half) * static_cast<long>(kernel) + (x + half)] = v;
        sum += v;
      }
    for (std::size_t i = 0; i < kernel * kernel; ++i) k[i] /= sum;
  }
  FeatureExtractor ex;
  ex.layers = {l};
  return ex;
}

Tensor<double> random_integer_image(std::uint64_t seed, std::size_t h, std::size_t w, int levels) {
  Rng rng(Rng::derive(seed, {0xE2}));
  Tensor<double> img({1, h, w});
  for (double& v : img.values()) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
  return img;
}

Tensor<double> blob_image(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t blobs, double sigma) {
  Rng rng(Rng::derive(seed, {0xE3}));
  Tensor<double> img({1, h, w});
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, static_cast<double>(w - 1)), cy = rng.uniform(0, static_cast<double>(h - 1));
    const double amp = rng.uniform(-1, 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        img[y * w + x] += amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
  }
  return img;
}

Tensor<double> transform_image(const Tensor<double>& image, const AffineTransform& t) {
  if (image.rank() != 3) throw DimensionError("transform_image expects C x H x W");
  const AffineTransform inv = invert(t);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<double> out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto s = inv.apply(static_cast<double>(x), static_cast<double>(y));
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * h + y) * w + x] = sample_point<double>(image.data() + ch * h * w, h, w, s[0], s[1],
                                                         BoundaryPolicy::ZeroFill);
    }
  return out;
}

namespace {

constexpr double kTol = 1e-9;

double matching_cost(const std::vector<std::vector<double>>& r, const std::vector<std::size_t>& p) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += r[i][p[i]];
  return s;
}

std::vector<std::size_t> best_permutation(const std::vector<std::vector<double>>& r) {
  const std::size_t k = r.size();
  std::vector<std::size_t> p(k);
  std::iota(p.begin(), p.end(), 0);
  if (k <= 8) {
    std::vector<std::size_t> best = p;
    double best_cost = matching_cost(r, p);
    while (std::next_permutation(p.begin(), p.end())) {
      const double c = matching_cost(r, p);
      if (c < best_cost) {
        best_cost = c;
        best = p;
      }
    }
    return best;
  }
  // Greedy: repeatedly take the cheapest remaining (i, j) pair.
  std::vector<bool> used_i(k), used_j(k);
  for (std::size_t round = 0; round < k; ++round) {
    double c = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (!used_i[i] && !used_j[j] && r[i][j] < c) {
          c = r[i][j];
          bi = i;
          bj = j;
        }
    used_i[bi] = used_j[bj] = true;
    p[bi] = bj;
  }
  std::vector<std::size_t> id(k);
  std::iota(id.begin(), id.end(), 0);
  return matching_cost(r, p) <= matching_cost(r, id) ? p : id;
}

bool box_inside(const AffineTransform& m, double x0, double y0, double x1, double y1, double w, double h) {
  const double xs[2] = {x0, x1}, ys[2] = {y0, y1};
  for (double x : xs)
    for (double y : ys) {
      const auto p = m.apply(x, y);
      if (p[0] < -kTol || p[1] < -kTol || p[0] > w - 1 + kTol || p[1] > h - 1 + kTol) return false;
    }
  return true;
}

}  // namespace

AuditReport alignment_residual_with(const FeatureExtractor& ex, const Tensor<double>& image,
                                    const AffineTransform& h_pixels, const AffineTransform& g_pixels,
                                    const std::optional<std::vector<std::size_t>>& permutation) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  const Tensor<double> f0 = ex.apply(image);
  const Tensor<double> f1 = ex.apply(transform_image(image, h_pixels));
  const ReceptiveField rf = ex.receptive_field();
  const double s = static_cast<double>(rf.stride), r = 0.5 * static_cast<double>(rf.support - 1);
  const std::size_t K = f0.dim(0), fh = f0.dim(1), fw = f0.dim(2);
  const AffineTransform m = invert(g_pixels);      // original point -> point in the transformed image
  const AffineTransform h_inv = invert(h_pixels);  // transformed image -> original image
  if (permutation && permutation->size() != K) throw ValueError("permutation size must equal channel count");

  // Aligned feature maps and the interior mask.
  std::vector<char> mask(fh * fw, 0);
  std::vector<double> aligned(K * fh * fw, 0.0);
  std::size_t count = 0;
  for (std::size_t y = 0; y < fh; ++y)
    for (std::size_t x = 0; x < fw; ++x) {
      const auto p = m.apply(s * static_cast<double>(x) + r, s * static_cast<double>(y) + r);
      double vx = (p[0] - r) / s, vy = (p[1] - r) / s;
      if (std::abs(vx - std::nearbyint(vx)) <= kTol) vx = std::nearbyint(vx);
      if (std::abs(vy - std::nearbyint(vy)) <= kTol) vy = std::nearbyint(vy);
      const double qx0 = std::floor(vx), qy0 = std::floor(vy);
      const double qx1 = vx == qx0 ? qx0 : qx0 + 1, qy1 = vy == qy0 ? qy0 : qy0 + 1;
      if (qx0 < 0 || qy0 < 0 || qx1 > static_cast<double>(f1.dim(2) - 1) || qy1 > static_cast<double>(f1.dim(1) - 1))
        continue;
      // Every pixel feeding the taps must come from inside the original image.
      if (!box_inside(h_inv, s * qx0, s * qy0, s * qx1 + 2 * r, s * qy1 + 2 * r, static_cast<double>(W),
                      static_cast<double>(H)))
        continue;
      mask[y * fw + x] = 1;
      ++count;
      for (std::size_t c = 0; c < K; ++c)
        aligned[(c * fh + y) * fw + x] = sample_point<double>(f1.data() + c * f1.dim(1) * f1.dim(2), f1.dim(1),
                                                              f1.dim(2), vx, vy, BoundaryPolicy::ZeroFill);
    }
  if (count == 0) throw ValueError("alignment_residual: empty interior (image too small for this transform)");

  AuditReport rep;
  rep.interior = count;
  double norm = 0;
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t i = 0; i < fh * fw; ++i)
      if (mask[i]) norm += std::abs(f0[c * fh * fw + i]);
  norm /= static_cast<double>(count * K);
  if (!(norm > 0)) throw ValueError("alignment_residual: features vanish on the interior");
  rep.norm = norm;
  rep.pair_residual.assign(K, std::vector<double>(K, 0.0));
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      double acc = 0;
      for (std::size_t q = 0; q < fh * fw; ++q)
        if (mask[q]) acc += std::abs(aligned[j * fh * fw + q] - f0[i * fh * fw + q]);
      rep.pair_residual[i][j] = acc / static_cast<double>(count) / norm;
    }
  std::vector<std::size_t> id(K);
  std::iota(id.begin(), id.end(), 0);
  rep.residual_same = matching_cost(rep.pair_residual, id) / static_cast<double>(K);
  rep.permutation = permutation ? *permutation : best_permutation(rep.pair_residual);
  rep.residual_perm = matching_cost(rep.pair_residual, rep.permutation) / static_cast<double>(K);

  double disp = 0;
  for (double cx : {0.0, static_cast<double>(W - 1)})
    for (double cy : {0.0, static_cast<double>(H - 1)}) {
      const auto p = h_pixels.apply(cx, cy);
      disp = std::max(disp, std::hypot(p[0] - cx, p[1] - cy));
    }
  rep.nominal_margin = r + std::ceil(disp - kTol) + 2;
  return rep;
}

AuditReport alignment_residual(const FeatureExtractor& ex, const Tensor<double>& image,
                               const TransformGroupElement& h,
                               const std::optional<std::vector<std::size_t>>& permutation) {
  if (image.rank() != 3) throw DimensionError("alignment_residual expects C x H x W");
  const AffineTransform t = h.image_matrix(image.dim(1), image.dim(2));
  return alignment_residual_with(ex, image, t, invert(t), permutation);
}

namespace {

using Poly = std::vector<std::array<double, 2>>;

double poly_area(const Poly& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - v[0] * u[1];
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman clip of `subject` against the axis-aligned square
// [-half, half]^2.
Poly clip_square(Poly subject, double half) {
  struct Edge {
    int axis;
    double sign;
  };
  for (const Edge e : {Edge{0, 1}, Edge{0, -1}, Edge{1, 1}, Edge{1, -1}}) {
    auto inside = [&](const std::array<double, 2>& p) { return e.sign * p[e.axis] <= half; };
    Poly out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const auto& a = subject[i];
      const auto& b = subject[(i + 1) % subject.size()];
      const bool ia = inside(a), ib = inside(b);
      if (ia) out.push_back(a);
      if (ia != ib) {
        const double t = (e.sign * half - a[e.axis]) / (b[e.axis] - a[e.axis]);
        out.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
      }
    }
    subject = std::move(out);
    if (subject.empty()) break;
  }
  return subject;
}

}  // namespace

double receptive_field_overlap(const TransformGroupElement& h, double support) {
  if (!(support >= 1)) throw ValueError("receptive_field_overlap: support must be >= 1");
  // Only the linear part matters once the centers are aligned.
  AffineTransform l = h.image_matrix(1, 1);
  l.m[2] = l.m[5] = 0;
  const AffineTransform li = invert(l);
  const double half = 0.5 * support;
  Poly sq;
  for (const auto& c : std::array<std::array<double, 2>, 4>{{{-half, -half}, {half, -half}, {half, half}, {-half, half}}}) {
    const auto p = li.apply(c[0], c[1]);
    sq.push_back({p[0], p[1]});
  }
  const Poly inter = clip_square(sq, half);
  if (inter.size() < 3) return 0.0;
  return std::min(1.0, poly_area(inter) / (support * support));
}

std::vector<NecessityRow> necessity_check(const FeatureExtractor& ex, const Tensor<double>& image,
                                          const TransformGroupElement& h,
                                          const std::vector<std::pair<std::string, AffineTransform>>& candidates) {
  if (candidates.empty()) throw ValueError("necessity_check: no candidate transformations");
  const AffineTransform t = h.image_matrix(image.dim(1), image.dim(2));
  std::vector<NecessityRow> rows;
  for (const auto& [label, g] : candidates) {
    NecessityRow row{label, g, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    try {
      const AuditReport rep = alignment_residual_with(ex, image, t, g);
      row.residual_same = rep.residual_same;
      row.residual_perm = rep.residual_perm;
    } catch (const ValueError&) {
      // No comparable interior: the candidate cannot align anything.
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const NecessityRow& a, const NecessityRow& b) { return a.residual_same < b.residual_same; });
  return rows;
}

}  // namespace stnlab
