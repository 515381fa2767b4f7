#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "stnlab/affine_pose.hpp"
#include "stnlab/error.hpp"
#include "stnlab/rng.hpp"
#include "support/oracles.hpp"

using namespace stnlab;

using stnlab::testing::similarity_error;

TEST_CASE("compose and invert") {
  const auto a = AffineTransform{{1, 2, 3, -1, 0.5, 2}, Frame::ImageSpace};
  const auto ai = invert(a);
  CHECK(ai.frame == Frame::GridSpace);
  CHECK_THROWS_AS(compose(a, ai), ValueError);
  const auto id = compose(a, AffineTransform{ai.m, Frame::ImageSpace});
  CHECK(id.frame == Frame::ImageSpace);
  const double ref[6] = {1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(id.m[i] == doctest::Approx(ref[i]));
  // a * b applies b first.
  const auto q = compose(a, AffineTransform{{2, 0, 1, 0, 2, 0}, Frame::ImageSpace}).apply(1, 1);
  const auto r = a.apply(3, 2);
  CHECK(q[0] == doctest::Approx(r[0]));
  CHECK(q[1] == doctest::Approx(r[1]));
  CHECK_THROWS_AS(invert(AffineTransform{{1, 2, 0, 2, 4, 0}}), SingularMatrixError);
}

TEST_CASE("similarity fit: shear example") {
  const SimilarityFit f = fit_similarity(AffineTransform{{1, 0.5, 0, 0, 1, 0}});
  CHECK(f.degrees == doctest::Approx(-14.036243467926479).epsilon(1e-12));
  CHECK(f.scale == doctest::Approx(1.0307764064044151).epsilon(1e-12));
  CHECK_THROWS_AS(fit_similarity(AffineTransform{{1, 0, 0, 0, -1, 0}}), ValueError);
  CHECK(fit_similarity(AffineTransform::rotation(180)).degrees == 180.0);
}

TEST_CASE("similarity fit beats or ties the grid search") {
  Rng rng(4);
  const stnlab::testing::SimilarityGrid grid;
  for (int i = 0; i < 30; ++i) {
    AffineTransform a{{rng.uniform(-2, 2), rng.uniform(-2, 2), 0, rng.uniform(-2, 2), rng.uniform(-2, 2), 0}};
    const SimilarityFit f = fit_similarity(a);
    CHECK(similarity_error(a, f.scale, f.degrees) <= grid.best_error(a) + 1e-6);
  }
}

TEST_CASE("pose readouts and frame signs") {
  CHECK(rotation_of(AffineTransform::rotation(30, Frame::ImageSpace)) == doctest::Approx(30));
  CHECK(rotation_of(AffineTransform::rotation(30, Frame::GridSpace)) == doctest::Approx(-30));
  CHECK(rotation_of(AffineTransform::rotation(180, Frame::GridSpace)) == doctest::Approx(180));
  CHECK(scale_of(AffineTransform::scaling(2, 2, Frame::ImageSpace)) == doctest::Approx(2));
  CHECK(scale_of(AffineTransform::scaling(2, 2, Frame::GridSpace)) == doctest::Approx(-2));
  CHECK_THROWS_AS(scale_of(AffineTransform::scaling(-1, 1)), ValueError);
  const auto t = translation_of(AffineTransform::translation(0.5, -0.25), 13.5);
  CHECK(t[0] == doctest::Approx(6.75));
  CHECK(t[1] == doctest::Approx(-3.375));
  const auto u = translation_of(AffineTransform::translation(3, 1, Frame::ImageSpace), 2);
  CHECK(u[0] == doctest::Approx(-6));
  CHECK(u[1] == doctest::Approx(-2));
  CHECK(effective_pixel_scale(PixelScaleContext{28, 1}) == 13.5);
  CHECK(effective_pixel_scale(PixelScaleContext{10, 2}) == 9);
}

TEST_CASE("pose summary of a uniform angle spread matches 180 / sqrt(12)") {
  Rng rng(7);
  std::vector<PoseRecord> recs;
  for (int i = 0; i < 200000; ++i)
    recs.push_back({static_cast<int>(rng.below(10)), PoseKind::Rotation, {rng.uniform(-90, 90), 0}, {0, 0}});
  const PoseSummary s = pose_summary(recs);
  CHECK(s.per_label.size() == 10);
  CHECK(s.average == doctest::Approx(180.0 / std::sqrt(12.0)).epsilon(0.01));
}

TEST_CASE("pose summary details") {
  // Translation uses the standard distance deviation.
  std::vector<PoseRecord> t{{1, PoseKind::Translation, {1, 0}, {0, 0}},
                            {1, PoseKind::Translation, {-1, 0}, {0, 0}},
                            {1, PoseKind::Translation, {0, 1}, {0, -1}}};
  // Final poses (1,0), (-1,0), (0,0): mean (0,0), rms distance sqrt(2/3).
  CHECK(pose_summary(t).average == doctest::Approx(std::sqrt(2.0 / 3.0)));
  std::vector<PoseRecord> one{{1, PoseKind::Rotation, {1, 0}, {0, 0}}};
  CHECK_THROWS_AS(pose_summary(one), ValueError);
  std::vector<PoseRecord> mixed{{1, PoseKind::Rotation, {1, 0}, {0, 0}}, {1, PoseKind::Scale, {1, 0}, {0, 0}}};
  CHECK_THROWS_AS(pose_summary(mixed), ValueError);
  // Perfect compensation collapses the spread.
  std::vector<PoseRecord> comp{{2, PoseKind::Rotation, {40, 0}, {-40, 0}}, {2, PoseKind::Rotation, {-70, 0}, {70, 0}}};
  CHECK(pose_summary(comp).average == 0.0);
}

TEST_CASE("orthogonal regression matches the principal eigenvector") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const double slope = rng.uniform(-3, 3), icpt = rng.uniform(-5, 5);
    std::vector<std::array<double, 2>> pts;
    for (int i = 0; i < 200; ++i) {
      const double x = rng.uniform(-10, 10);
      pts.push_back({x + rng.uniform(-0.5, 0.5), slope * x + icpt + rng.uniform(-0.5, 0.5)});
    }
    const LineFit f = orthogonal_regression(pts);
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += Eigen::Vector2d(p[0], p[1]);
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
      const Eigen::Vector2d d = Eigen::Vector2d(p[0], p[1]) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Eigen::Vector2d dir = es.eigenvectors().col(1);
    const double ref_slope = dir.y() / dir.x();
    CHECK(f.slope == doctest::Approx(ref_slope).epsilon(1e-9));
    CHECK(f.intercept == doctest::Approx(mean.y() - ref_slope * mean.x()).epsilon(1e-9));
  }
}

TEST_CASE("orthogonal regression edge cases") {
  std::vector<std::array<double, 2>> vert{{2, 0}, {2, 1}, {2, 5}};
  const LineFit v = orthogonal_regression(vert);
  CHECK(v.vertical);
  CHECK(std::isinf(v.slope));
  CHECK(v.intercept == doctest::Approx(2));
  std::vector<std::array<double, 2>> horiz{{0, 0}, {1, 0}, {2, 0}};
  CHECK(orthogonal_regression(horiz).slope == doctest::Approx(0));
  std::vector<std::array<double, 2>> same{{1, 1}, {1, 1}};
  CHECK_THROWS_AS(orthogonal_regression(same), ValueError);
}
