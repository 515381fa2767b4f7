#pragma once

#include <memory>
#include <vector>

#include "stnlab/tensor.hpp"

namespace stnlab {

/// One optimized tensor with its learning-rate multiplier.
struct ParamGroupEntry {
  std::shared_ptr<Tensor<float>> tensor;
  double lr_scale = 1.0;
};

/// SGD with optional (Nesterov) momentum and an L2 term folded into the
/// gradient:  g = grad + l2 * p;  v = momentum * v + g;
/// p -= lr * scale * (nesterov ? g + momentum * v : v).
class SgdState {
 public:
  SgdState(double learning_rate, double momentum = 0.0, bool nesterov = false, double l2 = 0.0);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  double momentum() const { return momentum_; }
  bool nesterov() const { return nesterov_; }
  double l2() const { return l2_; }

  /// Applies one update to every entry and clears their gradients. Entries
  /// without a gradient buffer are skipped.
  void step(const std::vector<ParamGroupEntry>& params);

  template <typename T>
  void step_tensor(Tensor<T>& p, std::vector<T>& velocity, double lr_scale) const;

  const std::vector<std::vector<float>>& velocities() const { return velocity_; }

 private:
  double lr_, momentum_;
  bool nesterov_;
  double l2_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace stnlab
