#include "mscount/optim.hpp"

#include <stdexcept>
#include <string>

namespace mscount {

SgdMomentum::SgdMomentum(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("learning rate must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
}

void SgdMomentum::step(std::span<Tensor> params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("sgd step before backward: parameter " +
                             std::to_string(i) + " has no gradient");
    }
  }
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.size(), 0.0);
  } else if (velocity_.size() != params.size()) {
    throw std::logic_error("sgd parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity_[i];
    if (v.size() != params[i].size()) {
      throw std::logic_error("sgd parameter " + std::to_string(i) + " changed size");
    }
    auto data = params[i].data();
    const auto g = params[i].grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      data[j] -= learning_rate_ * v[j];
    }
    params[i].clear_grad();
  }
}

}  // namespace mscount
