#include <doctest.h>

#include <cmath>

#include "stnlab/affine_pose.hpp"
#include "stnlab/equi_audit.hpp"
#include "stnlab/error.hpp"

using namespace stnlab;

using TG = TransformGroupElement;

TEST_CASE("receptive field descriptor follows the layers") {
  const ReceptiveField rf = random_extractor(1).receptive_field();
  CHECK(rf.support == 8);
  CHECK(rf.stride == 2);
  CHECK(mirrored_pair_extractor(5).receptive_field().support == 5);
  CHECK(isotropic_extractor({1.0}).receptive_field().support == 7);
}

TEST_CASE("integer translations align exactly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ex = random_extractor(seed);
    const auto img = random_integer_image(seed, 40, 40);
    for (auto [dx, dy] : {std::pair<long, long>{4, -6}, {-2, 2}, {0, 8}}) {
      const AuditReport r = alignment_residual(ex, img, TG::translation(dx, dy));
      CHECK(r.interior > 0);
      CHECK(r.residual_same == 0.0);
      CHECK(r.residual_perm == 0.0);
    }
  }
}

TEST_CASE("mirrored pair swaps channels under a half turn") {
  const auto ex = mirrored_pair_extractor(5, 3);
  const auto& k = ex.layers[0].kernel;
  for (std::size_t i = 0; i < 25; ++i) CHECK(k[25 + i] == k[24 - i]);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const AuditReport r = alignment_residual(ex, random_integer_image(seed, 32, 32), TG::rotation(180));
    CHECK(r.residual_perm == 0.0);
    CHECK(r.permutation == std::vector<std::size_t>{1, 0});
    CHECK(r.residual_same > 0.1);
    const AuditReport forced = alignment_residual(ex, random_integer_image(seed, 32, 32), TG::rotation(180),
                                                  std::vector<std::size_t>{1, 0});
    CHECK(forced.residual_perm == 0.0);
  }
}

TEST_CASE("isotropic filters align under rotation") {
  const auto ex = isotropic_extractor({1.0, 2.0});
  const auto& k = ex.layers[0].kernel;
  const std::size_t n = k.dim(2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double v = k[(c * n + y) * n + x];
        CHECK(v == k[(c * n + x) * n + (n - 1 - y)]);          // quarter turn
        CHECK(v == k[(c * n + (n - 1 - y)) * n + (n - 1 - x)]);  // half turn
      }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto img = blob_image(seed, 64, 64, 12, 12.0);
    CHECK(alignment_residual(ex, img, TG::rotation(90)).residual_same < 1e-10);
    const double r33 = alignment_residual(ex, img, TG::rotation(33)).residual_same;
    MESSAGE("seed " << seed << " rotation 33: " << r33);
    CHECK(r33 < 5e-3);
  }
}

TEST_CASE("rotations and scalings do not align random stacks") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ex = random_extractor(seed);
    const auto img = random_integer_image(seed, 48, 48);
    for (const TG& h : {TG::rotation(45), TG::uniform_scale(2)}) {
      const AuditReport r = alignment_residual(ex, img, h);
      CHECK(r.residual_perm > 0.0);
      CHECK(r.residual_perm <= r.residual_same);
      CHECK(r.nominal_margin > 0.0);
    }
  }
}

TEST_CASE("receptive field overlap") {
  CHECK(receptive_field_overlap(TG::translation(3, 1), 5) == 1.0);
  CHECK(receptive_field_overlap(TG::uniform_scale(2), 8) == 0.25);
  for (double s : {1.0, 1.5, 2.0, 3.0, 0.5}) CHECK(receptive_field_overlap(TG::uniform_scale(s), 6) == doctest::Approx(std::min(1.0, 1 / (s * s))).epsilon(1e-15));
  CHECK(std::abs(receptive_field_overlap(TG::rotation(45), 7) - 2 * (std::sqrt(2.0) - 1)) < 1e-9);
  CHECK(receptive_field_overlap(TG::rotation(90), 7) == doctest::Approx(1.0));
  CHECK_THROWS_AS(receptive_field_overlap(TG::rotation(10), 0.5), ValueError);
}

TEST_CASE("necessity: only the inverse map aligns a translation") {
  const auto ex = random_extractor(2);
  const auto img = random_integer_image(2, 40, 40);
  const TG h = TG::translation(4, 2);
  const auto rows = necessity_check(ex, img, h,
                                    {{"identity", AffineTransform::identity(Frame::ImageSpace)},
                                     {"h", AffineTransform::translation(4, 2, Frame::ImageSpace)},
                                     {"h_inverse", AffineTransform::translation(-4, -2, Frame::ImageSpace)}});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "h_inverse");
  CHECK(rows[0].residual_same == 0.0);
  CHECK(rows[1].residual_same > 0.0);

  const TG rot = TG::rotation(45);
  const AffineTransform t = rot.image_matrix(40, 40);
  const auto rrows = necessity_check(ex, img, rot, {{"h_inverse", invert(t)}, {"identity", AffineTransform::identity(Frame::ImageSpace)}});
  CHECK(rrows[0].residual_same > 0.0);
  CHECK_THROWS_AS(necessity_check(ex, img, h, {}), ValueError);
}

TEST_CASE("audit input errors") {
  CHECK_THROWS_AS(alignment_residual(random_extractor(1), random_integer_image(1, 10, 10), TG::rotation(30)), ValueError);
  CHECK_THROWS_AS(TG::uniform_scale(0), ValueError);
  CHECK_THROWS_AS(parse_group_kind("shear"), ValueError);
  CHECK_THROWS_AS(alignment_residual(random_extractor(1), Tensor<double>({2, 20, 20}), TG::rotation(30)), DimensionError);
}
