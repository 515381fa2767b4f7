#include <doctest.h>

#include <cmath>

#include "stnlab/error.hpp"
#include "stnlab/graph.hpp"
#include "support/grad_suite.hpp"

using namespace stnlab;
using namespace stnlab::testing;

TEST_CASE("every differentiable op matches central differences") {
  for (const auto& c : gradient_suite()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const GradCheck r = c.run(seed);
      INFO(c.name << " seed " << seed << " max rel " << r.max_rel);
      CHECK(r.ok());
    }
  }
}

TEST_CASE("softmax cross-entropy agrees with a long double evaluation") {
  Rng rng(9);
  Tensor<float> z({3, 4});
  for (float& v : z.values()) v = static_cast<float>(rng.uniform(-20, 20));
  const std::vector<int> labels{0, 3, 2};
  Graph<float> g;
  const NodeId loss = g.softmax_cross_entropy(g.input(z), labels);
  long double ref = 0;
  for (std::size_t n = 0; n < 3; ++n) {
    long double mx = z[n * 4];
    for (std::size_t k = 1; k < 4; ++k) mx = std::max<long double>(mx, z[n * 4 + k]);
    long double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += std::exp(static_cast<long double>(z[n * 4 + k]) - mx);
    ref += -(static_cast<long double>(z[n * 4 + labels[n]]) - mx - std::log(s));
  }
  ref /= 3;
  CHECK(g.value(loss)[0] == doctest::Approx(static_cast<double>(ref)).epsilon(1e-6));
  CHECK_THROWS_AS(g.softmax_cross_entropy(g.input(z), std::vector<int>{0, 4, 1}), ValueError);
}

TEST_CASE("a tensor bound twice gets one node and the summed gradient") {
  Tensor<double> w({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> x({1, 2}, std::vector<double>{0.5, -1});
  Graph<double> g;
  const NodeId a = g.parameter(w);
  CHECK(g.parameter(w) == a);
  // loss = sum(x W W)
  const NodeId xw = g.fully_connected(g.input(x), a, Graph<double>::kNone);
  const NodeId loss = g.sum(g.fully_connected(xw, g.parameter(w), Graph<double>::kNone));
  g.backward(loss);
  // By hand: dW[i][j] = (x W)_i + x_i * (W 1)_j.
  const double xw0 = 0.5 * 1 - 1 * 3, xw1 = 0.5 * 2 - 1 * 4;
  const double r0 = 1 + 2, r1 = 3 + 4;
  const double ref[4] = {0.5 * r0 + xw0, 0.5 * r1 + xw0, -1 * r0 + xw1, -1 * r1 + xw1};
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(ref[i]));
}

TEST_CASE("graph state errors") {
  Graph<double> empty;
  CHECK_THROWS_AS(empty.backward(0), StateError);

  Tensor<double> p({3}, std::vector<double>{1, 2, 3});
  Graph<double> g;
  const NodeId x = g.parameter(p);
  CHECK_THROWS_AS(g.backward(x), StateError);  // not a scalar
  const NodeId s = g.sum(x);
  g.backward(s);
  CHECK(g.backward_visits() >= 2);
  CHECK_THROWS_AS(g.backward(s), StateError);
  CHECK_THROWS_AS(g.sum(x), StateError);
}

TEST_CASE("dropout outside training is the identity") {
  Rng rng(1);
  Tensor<float> x({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Graph<float> g;
  CHECK(g.value(g.dropout(g.input(x), 0.5, false, rng)) == x);
  CHECK_THROWS_AS(g.dropout(g.input(x), 1.0, true, rng), ValueError);
}

TEST_CASE("nodes that do not reach the loss are skipped") {
  Tensor<double> a({2}, std::vector<double>{1, 2}), b({2}, std::vector<double>{3, 4});
  Graph<double> g;
  const NodeId na = g.parameter(a);
  g.sum(g.parameter(b));  // dead branch
  g.backward(g.sum(na));
  CHECK(a.grad()[0] == 1.0);
  CHECK(!b.has_grad());
}
