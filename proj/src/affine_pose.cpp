#include "stnlab/affine_pose.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace stnlab {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double sign_for(Frame f) { return f == Frame::GridSpace ? -1.0 : 1.0; }

}  // namespace

AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  if (a.frame != b.frame) throw ValueError("compose: transforms live in different frames");
  const auto& p = a.m;
  const auto& q = b.m;
  return {{p[0] * q[0] + p[1] * q[3], p[0] * q[1] + p[1] * q[4], p[0] * q[2] + p[1] * q[5] + p[2],
           p[3] * q[0] + p[4] * q[3], p[3] * q[1] + p[4] * q[4], p[3] * q[2] + p[4] * q[5] + p[5]},
          a.frame};
}

AffineTransform invert(const AffineTransform& a) {
  const double d = a.det();
  if (!(std::abs(d) > 1e-12))
    throw SingularMatrixError("cannot invert affine matrix with determinant " + std::to_string(d));
  const double i11 = a.m[4] / d, i12 = -a.m[1] / d, i21 = -a.m[3] / d, i22 = a.m[0] / d;
  return {{i11, i12, -(i11 * a.m[2] + i12 * a.m[5]), i21, i22, -(i21 * a.m[2] + i22 * a.m[5])},
          a.frame == Frame::GridSpace ? Frame::ImageSpace : Frame::GridSpace};
}

SimilarityFit fit_similarity(const AffineTransform& a) {
  const double c = a.a11() + a.a22(), s = a.a21() - a.a12();
  if (c == 0 && s == 0)
    throw ValueError("fit_similarity: undetermined angle (a11 + a22 = 0 and a21 - a12 = 0)");
  SimilarityFit f;
  f.u = 0.5 * c;
  f.v = 0.5 * s;
  f.scale = 0.5 * std::sqrt(a.a11() * a.a11() + a.a12() * a.a12() + a.a21() * a.a21() +
                            a.a22() * a.a22() + 2 * (a.a11() * a.a22() - a.a12() * a.a21()));
  f.degrees = std::atan2(s, c) * kRadToDeg;
  if (f.degrees == -180.0) f.degrees = 180.0;
  return f;
}

double rotation_of(const AffineTransform& a) {
  const double d = fit_similarity(a).degrees;
  if (a.frame == Frame::ImageSpace || d == 0) return d;
  return d == 180.0 ? 180.0 : -d;
}

double scale_of(const AffineTransform& a) {
  const double d = a.det();
  if (!(d > 0))
    throw ValueError("scale_of: determinant " + std::to_string(d) +
                     " is not positive (orientation-reversing or singular)");
  return sign_for(a.frame) * std::log2(d);
}

std::array<double, 2> translation_of(const AffineTransform& a, double m) {
  if (m == 0) throw ValueError("translation_of: pixel scale must be non-zero");
  if (a.frame == Frame::GridSpace) return {m * a.a13(), m * a.a23()};
  const AffineTransform inv = invert(a);
  return {m * inv.a13(), m * inv.a23()};
}

double effective_pixel_scale(const PixelScaleContext& ctx) {
  if (ctx.width_at_st < 1 || ctx.cumulative_stride < 1)
    throw ValueError("effective_pixel_scale: width and stride must be positive");
  return 0.5 * static_cast<double>(ctx.width_at_st - 1) * static_cast<double>(ctx.cumulative_stride);
}

std::string_view pose_kind_name(PoseKind k) {
  switch (k) {
    case PoseKind::Rotation: return "rotation";
    case PoseKind::Translation: return "translation";
    case PoseKind::Scale: return "scale";
  }
  return "unknown";
}

PoseKind parse_pose_kind(std::string_view s) {
  if (s == "rotation" || s == "R") return PoseKind::Rotation;
  if (s == "translation" || s == "T") return PoseKind::Translation;
  if (s == "scale" || s == "S") return PoseKind::Scale;
  throw ValueError("unknown pose kind '" + std::string(s) + "' (expected rotation, translation, scale)");
}

std::array<double, 2> compensation_of(PoseKind kind, const AffineTransform& grid_matrix, double m) {
  switch (kind) {
    case PoseKind::Rotation: return {rotation_of(grid_matrix), 0};
    case PoseKind::Scale: return {scale_of(grid_matrix), 0};
    case PoseKind::Translation: return translation_of(grid_matrix, m);
  }
  return {0, 0};
}

PoseSummary pose_summary(std::span<const PoseRecord> records) {
  if (records.empty()) throw ValueError("pose_summary: no records");
  PoseSummary out;
  out.kind = records.front().kind;
  std::map<int, std::vector<std::array<double, 2>>> groups;
  for (const auto& r : records) {
    if (r.kind != out.kind) throw ValueError("pose_summary: records mix pose kinds");
    groups[r.label].push_back({r.theta[0] + r.theta_prime[0], r.theta[1] + r.theta_prime[1]});
  }
  double total = 0;
  for (const auto& [label, pts] : groups) {
    if (pts.size() < 2)
      throw ValueError("pose_summary: label " + std::to_string(label) + " has fewer than 2 records");
    const double n = static_cast<double>(pts.size());
    double mx = 0, my = 0;
    for (const auto& p : pts) {
      mx += p[0];
      my += p[1];
    }
    mx /= n;
    my /= n;
    double ss = 0;
    for (const auto& p : pts) {
      ss += (p[0] - mx) * (p[0] - mx);
      if (out.kind == PoseKind::Translation) ss += (p[1] - my) * (p[1] - my);
    }
    const double sd = std::sqrt(ss / n);
    out.per_label[label] = sd;
    total += sd;
  }
  out.average = total / static_cast<double>(groups.size());
  return out;
}

double seed_average(std::span<const PoseSummary> per_seed) {
  if (per_seed.empty()) throw ValueError("seed_average: no summaries");
  double s = 0;
  for (const auto& p : per_seed) s += p.average;
  return s / static_cast<double>(per_seed.size());
}

LineFit orthogonal_regression(std::span<const std::array<double, 2>> points) {
  if (points.size() < 2) throw ValueError("orthogonal_regression: need at least 2 points");
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& p : points) {
    mx += p[0];
    my += p[1];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : points) {
    const double dx = p[0] - mx, dy = p[1] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx + syy == 0) throw ValueError("orthogonal_regression: all points coincide");
  // Principal axis of [[sxx, sxy], [sxy, syy]].
  const double half = 0.5 * (sxx - syy);
  const double lambda = 0.5 * (sxx + syy) + std::hypot(half, sxy);
  double ex, ey;
  if (sxx >= syy) {
    ex = lambda - syy;
    ey = sxy;
  } else {
    ex = sxy;
    ey = lambda - sxx;
  }
  LineFit f;
  if (std::abs(ex) <= 1e-15 * std::hypot(ex, ey)) {
    f.vertical = true;
    f.slope = std::numeric_limits<double>::infinity();
    f.intercept = mx;
    return f;
  }
  f.slope = ey / ex;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace stnlab
