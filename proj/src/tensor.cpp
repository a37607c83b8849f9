#include "mscount/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mscount {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

void check_shape(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw std::invalid_argument("negative tensor dimension " + s.str());
  }
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (!std::isfinite(fill)) {
    throw std::invalid_argument("non-finite tensor fill value");
  }
  impl_->shape = shape;
  impl_->data.assign(shape.size(), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (values.size() != shape.size()) {
    throw std::invalid_argument("tensor data length " +
                                std::to_string(values.size()) +
                                " does not match shape " + shape.str());
  }
  if (!all_finite(values)) {
    throw std::invalid_argument("tensor data contains NaN or Inf");
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1, 1, 1, 1}, v, requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty{};
  return impl_ ? impl_->shape : empty;
}

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double& Tensor::at(int n, int c, int y, int x) {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::at(int n, int c, int y, int x) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() on non-scalar tensor " + shape().str());
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::clear_grad() const {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(std::function<void()> backward) {
  entries_.push_back(std::move(backward));
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got " +
                                loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("loss does not depend on any tensor requiring grad");
  }
  loss.grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

}  // namespace mscount
