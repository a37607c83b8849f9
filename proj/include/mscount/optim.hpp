#pragma once

#include <span>
#include <vector>

#include "mscount/tensor.hpp"

namespace mscount {

/// Heavy-ball SGD:
///   velocity <- momentum * velocity + grad
///   param    <- param - learning_rate * velocity
/// Velocities are created zero-filled on the first step, one per parameter,
/// and matched to parameters by position. Gradients are cleared after the step.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum);

  /// Throws std::logic_error if any parameter has no gradient (step before
  /// backward) or if the parameter list changes shape between steps.
  void step(std::span<Tensor> params);

  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }
  const std::vector<std::vector<double>>& velocities() const { return velocity_; }

 private:
  double learning_rate_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace mscount
