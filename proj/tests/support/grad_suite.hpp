#pragma once

// The gradient suite: every differentiable graph op checked against central
// differences at 64-bit.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "stnlab/arch.hpp"
#include "stnlab/network.hpp"

namespace stnlab::testing {

struct GradCase {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

inline std::vector<GradCase> gradient_suite() {
  using G = Graph<double>;
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 2, 7, 6}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.conv2d(p[0], p[1], p[2]), seed);
    }, {&x, &k, &b}, seed);
  }});
  cases.push_back({"conv2d_no_bias", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({1, 3, 5, 5}, rng), k = random_tensor({2, 3, 5, 5}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.conv2d(p[0], p[1], G::kNone), seed);
    }, {&x, &k}, seed);
  }});
  cases.push_back({"maxpool2x2", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 2, 7, 8}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.maxpool2x2(p[0]), seed);
    }, {&x}, seed, 200);
  }});
  cases.push_back({"avgpool2x2", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 2, 7, 8}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.avgpool2x2(p[0]), seed);
    }, {&x}, seed, 200);
  }});
  cases.push_back({"fully_connected", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({4}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.fully_connected(p[0], p[1], p[2]), seed);
    }, {&x, &w, &b}, seed);
  }});
  cases.push_back({"relu", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 7}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.relu(p[0]), seed);
    }, {&x}, seed);
  }});
  cases.push_back({"leaky_relu", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 7}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.leaky_relu(p[0], 1.0 / 3.0), seed);
    }, {&x}, seed);
  }});
  cases.push_back({"dropout", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 6}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      Rng mask(Rng::derive(seed, {0xD0}));  // same mask on every evaluation
      return weighted_sum(g, g.dropout(p[0], 0.3, true, mask), seed);
    }, {&x}, seed);
  }});
  cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
    Rng rng(seed);
    auto z = random_tensor({4, 5}, rng, -3, 3);
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.below(5));
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return g.softmax_cross_entropy(p[0], labels);
    }, {&z}, seed);
  }});
  cases.push_back({"compose_affine", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 6}, rng), b = random_tensor({3, 6}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.compose_affine(p[0], p[1]), seed);
    }, {&a, &b}, seed);
  }});
  cases.push_back({"add_constant_reshape", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 6}, rng);
    auto c = random_tensor({6}, rng);
    return check_gradients([&](G& g, const std::vector<NodeId>& p) {
      return weighted_sum(g, g.reshape(g.add_constant(p[0], c), {2, 2, 3}), seed);
    }, {&x}, seed);
  }});
  for (BoundaryPolicy policy : {BoundaryPolicy::ZeroFill, BoundaryPolicy::ClampNearest}) {
    const bool zero = policy == BoundaryPolicy::ZeroFill;
    cases.push_back({zero ? "spatial_transform_zero_fill" : "spatial_transform_clamp", [policy](std::uint64_t seed) {
      Rng rng(seed);
      auto x = random_tensor({2, 2, 6, 7}, rng);
      Tensor<double> theta({2, 6});
      for (std::size_t n = 0; n < 2; ++n) {
        // Scaled up so part of the grid leaves the image and the boundary
        // policy matters.
        const double base[6] = {1.2, 0, 0, 0, 1.2, 0};
        for (std::size_t j = 0; j < 6; ++j) theta[n * 6 + j] = base[j] + rng.uniform(-0.3, 0.3);
      }
      return check_gradients([&](G& g, const std::vector<NodeId>& p) {
        return weighted_sum(g, g.spatial_transform(p[0], p[1], 5, 6, policy), seed);
      }, {&x, &theta}, seed, 84);
    }});
  }
  cases.push_back({"network_stn_sl1", [](std::uint64_t seed) {
    // End to end through a shared localization prefix: the shared tensors
    // must receive the sum of both paths.
    Network<double> net(builtin_spec("desk-r/stn-sl1"), seed);
    Rng rng(seed);
    for (const auto& p : net.params())
      if (p.name.rfind("st0.out", 0) == 0)
        for (double& v : p.tensor->values()) v += rng.uniform(-0.05, 0.05);
    auto x = random_tensor({2, 1, 28, 28}, rng, 0, 1);
    std::vector<int> labels{static_cast<int>(rng.below(10)), static_cast<int>(rng.below(10))};
    std::vector<Tensor<double>*> params;
    for (const auto& p : net.params()) params.push_back(p.tensor.get());
    return check_gradients([&](G& g, const std::vector<NodeId>&) {
      const ForwardResult r = net.forward(g, g.input(x));
      return g.softmax_cross_entropy(r.logits, labels);
    }, params, seed, 6);
  }});
  return cases;
}

}  // namespace stnlab::testing
