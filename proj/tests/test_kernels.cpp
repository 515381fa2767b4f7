#include <doctest.h>

#include <algorithm>
#include <limits>

#include "stnlab/kernels.hpp"
#include "stnlab/rng.hpp"
#include "stnlab/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace stnlab;
using stnlab::testing::random_tensor;

namespace {

// Straight nested-loop convolution.
std::vector<double> direct_conv(const kernels::ConvGeometry& g, const Tensor<double>& in, const Tensor<double>& k,
                                const std::vector<double>& bias) {
  const std::size_t oh = g.h - g.kh + 1, ow = g.w - g.kw + 1;
  std::vector<double> out(g.n * g.o * oh * ow);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          long double acc = bias.empty() ? 0 : bias[o];
          for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t i = 0; i < g.kh; ++i)
              for (std::size_t j = 0; j < g.kw; ++j)
                acc += static_cast<long double>(k[((o * g.c + c) * g.kh + i) * g.kw + j]) *
                       in[((n * g.c + c) * g.h + y + i) * g.w + x + j];
          out[((n * g.o + o) * oh + y) * ow + x] = static_cast<double>(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the direct convolution") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    kernels::ConvGeometry g{2, 3, 9, 8, 4, 3, 5};
    auto in = random_tensor({g.n, g.c, g.h, g.w}, rng);
    auto k = random_tensor({g.o, g.c, g.kh, g.kw}, rng);
    std::vector<double> bias(g.o);
    for (double& b : bias) b = rng.uniform(-1, 1);
    std::vector<double> out(g.n * g.o * g.out_h() * g.out_w());
    kernels::conv2d_forward<double>(g, in.values(), k.values(), bias, out);
    const auto ref = direct_conv(g, in, k, bias);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d is bit-reproducible") {
  Rng rng(3);
  kernels::ConvGeometry g{1, 2, 12, 12, 3, 5, 5};
  auto in = random_tensor({1, 2, 12, 12}, rng);
  auto k = random_tensor({3, 2, 5, 5}, rng);
  std::vector<double> a(3 * 8 * 8), b(3 * 8 * 8);
  kernels::conv2d_forward<double>(g, in.values(), k.values(), {}, a);
  kernels::conv2d_forward<double>(g, in.values(), k.values(), {}, b);
  CHECK(a == b);
}

TEST_CASE("maxpool matches the windowed max, ties go to the first element") {
  Rng rng(1);
  const std::size_t planes = 3, h = 7, w = 9;  // odd sizes drop the last row/column
  Tensor<double> in({planes, h, w});
  for (double& v : in.values()) v = static_cast<double>(rng.below(4));  // many ties
  std::vector<double> out(planes * 3 * 4);
  std::vector<std::uint32_t> arg(out.size());
  kernels::maxpool2x2_forward<double>(planes, h, w, in.values(), out, arg);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (p * h + 2 * y + dy) * w + 2 * x + dx;
            if (in[i] > best) {
              best = in[i];
              best_i = i;
            }
          }
        const std::size_t o = (p * 3 + y) * 4 + x;
        CHECK(out[o] == best);
        CHECK(arg[o] == best_i);
      }
}

TEST_CASE("avgpool averages each window") {
  Tensor<double> in({1, 4, 5});
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>(i);
  std::vector<double> out(2 * 2);
  kernels::avgpool2x2_forward<double>(1, 4, 5, in.values(), out);
  CHECK(out[0] == doctest::Approx((0 + 1 + 5 + 6) / 4.0));
  CHECK(out[3] == doctest::Approx((12 + 13 + 17 + 18) / 4.0));
}

TEST_CASE("fully connected matches the naive matrix product") {
  Rng rng(5);
  const std::size_t n = 4, d = 17, m = 6;
  auto in = random_tensor({n, d}, rng), w = random_tensor({d, m}, rng);
  std::vector<double> bias(m, 0.25), out(n * m);
  kernels::fc_forward<double>(n, d, m, in.values(), w.values(), bias, out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double ref = 0.25;
      for (std::size_t k = 0; k < d; ++k) ref += in[i * d + k] * w[k * m + j];
      CHECK(out[i * m + j] == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("dot product over awkward lengths") {
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u}) {
    std::vector<double> a(n), b(n);
    double ref = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(i) + 1;
      b[i] = 0.5;
      ref += a[i] * b[i];
    }
    CHECK(kernels::dot(a.data(), b.data(), n) == ref);
  }
}

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor<float>({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
  Tensor<float> t({2, 3});
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
}
