#pragma once

// Central finite-difference gradient checks shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "stnlab/graph.hpp"
#include "stnlab/rng.hpp"
#include "stnlab/tensor.hpp"

namespace stnlab::testing {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kGradRelTol = 1e-5;
// Denominator floor: gradients smaller than this are compared absolutely, so
// entries that are ~0 on both sides do not turn rounding noise into a ratio.
inline constexpr double kGradScaleFloor = 1e-3;

using LossBuilder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  bool ok() const { return failures == 0 && checked > 0; }
};

inline double grad_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  return diff / std::max({std::abs(analytic), std::abs(numeric), kGradScaleFloor});
}

/// Compares backward() against central differences for (up to `per_tensor`
/// sampled entries of) every tensor in `params`.
inline GradCheck check_gradients(const LossBuilder& build, const std::vector<Tensor<double>*>& params,
                                 std::uint64_t seed, std::size_t per_tensor = 40) {
  auto eval = [&](bool with_backward) {
    Graph<double> g;
    std::vector<NodeId> ids;
    for (auto* p : params) ids.push_back(g.parameter(*p));
    const NodeId loss = build(g, ids);
    if (with_backward) g.backward(loss);
    return g.value(loss)[0];
  };
  for (auto* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  eval(true);
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  Rng pick(Rng::derive(seed, {0xFD}));
  GradCheck res;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<double>& p = *params[t];
    std::vector<std::size_t> idx(p.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_tensor) {
      for (std::size_t i = 0; i < per_tensor; ++i) std::swap(idx[i], idx[i + pick.below(idx.size() - i)]);
      idx.resize(per_tensor);
    }
    for (std::size_t i : idx) {
      const double v = p[i];
      p[i] = v + kFdStep;
      const double up = eval(false);
      p[i] = v - kFdStep;
      const double down = eval(false);
      p[i] = v;
      const double e = grad_error(analytic[t][i], (up - down) / (2 * kFdStep));
      res.max_rel = std::max(res.max_rel, e);
      res.failures += e > kGradRelTol;
      ++res.checked;
    }
  }
  return res;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar sum_i w_i x_i with fixed pseudo-random weights, so every output
/// entry gets a distinct upstream gradient.
inline NodeId weighted_sum(Graph<double>& g, NodeId x, std::uint64_t seed) {
  const NodeId flat = g.flatten(x);
  const std::size_t d = g.value(flat).dim(1);
  Rng rng(Rng::derive(seed, {0x57}));
  const NodeId w = g.input(random_tensor({d, 1}, rng));
  return g.sum(g.fully_connected(flat, w, Graph<double>::kNone));
}

}  // namespace stnlab::testing
