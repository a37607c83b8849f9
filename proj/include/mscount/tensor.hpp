#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mscount {

/// Dimensions of a rank-4 (batch, channel, height, width) array.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major (n, c, h, w) array of doubles with optional gradient.
///
/// A Tensor is a handle: copies share storage, so a parameter held by a Model
/// and the same parameter captured by a Tape refer to one buffer. Use clone()
/// for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  /// Throws std::invalid_argument on size mismatch or non-finite entries.
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  bool defined() const { return impl_ != nullptr; }

  std::span<double> data();
  std::span<const double> data() const;

  double& at(int n, int c, int y, int x);
  double at(int n, int c, int y, int x) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient accumulator, allocated zero-filled on first access. Writable
  /// through const handles: backward rules accumulate into their inputs.
  std::span<double> grad() const;
  void clear_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

bool all_finite(std::span<const double> values);

/// Records backward rules of differentiable ops in execution order.
///
/// A non-recording tape (Tape::inference()) lets the same op code run without
/// building a graph.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  /// True when an op over `inputs` must record a backward rule.
  bool wants(std::initializer_list<const Tensor*> inputs) const;
  void record(std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays recorded rules in reverse.
  /// Throws std::invalid_argument if loss is not a single element.
  void backward(Tensor& loss);
  void clear() { entries_.clear(); }

 private:
  bool recording_;
  std::vector<std::function<void()>> entries_;
};

}  // namespace mscount
