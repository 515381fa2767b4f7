#include "stnlab/sgd.hpp"

#include "stnlab/error.hpp"

namespace stnlab {

SgdState::SgdState(double learning_rate, double momentum, bool nesterov, double l2)
    : lr_(learning_rate), momentum_(momentum), nesterov_(nesterov), l2_(l2) {
  set_learning_rate(learning_rate);
  if (!(momentum >= 0 && momentum < 1)) throw ValueError("momentum must be in [0, 1)");
  if (!(l2 >= 0)) throw ValueError("l2 must be >= 0");
}

void SgdState::set_learning_rate(double lr) {
  if (!(lr > 0)) throw ValueError("learning rate must be positive");
  lr_ = lr;
}

template <typename T>
void SgdState::step_tensor(Tensor<T>& p, std::vector<T>& velocity, double lr_scale) const {
  if (!p.has_grad()) return;
  if (velocity.size() != p.size()) velocity.assign(p.size(), T{0});
  const T lr = static_cast<T>(lr_ * lr_scale), mu = static_cast<T>(momentum_), l2 = static_cast<T>(l2_);
  std::span<T> v = p.values();
  std::span<T> g = p.grad();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T gi = g[i] + l2 * v[i];
    if (momentum_ == 0) {
      v[i] -= lr * gi;
      continue;
    }
    velocity[i] = mu * velocity[i] + gi;
    v[i] -= lr * (nesterov_ ? gi + mu * velocity[i] : velocity[i]);
  }
  p.zero_grad();
}

void SgdState::step(const std::vector<ParamGroupEntry>& params) {
  if (velocity_.size() != params.size()) velocity_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    step_tensor(*params[i].tensor, velocity_[i], params[i].lr_scale);
}

template void SgdState::step_tensor<float>(Tensor<float>&, std::vector<float>&, double) const;
template void SgdState::step_tensor<double>(Tensor<double>&, std::vector<double>&, double) const;

}  // namespace stnlab
