#pragma once

#include <cstdint>
#include <vector>

#include "deepdisaster/layers.hpp"

namespace deepdisaster {

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
  Adam() = default;
  Adam(std::vector<NamedParam> params, double learning_rate, double beta1, double beta2, double eps = 1e-8);

  void zero_grad();
  void step();

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return t_; }

  /// Moment buffers in parameter order, for checkpointing.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const std::vector<NamedParam>& params() const { return params_; }

private:
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 2e-3, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

}  // namespace deepdisaster
