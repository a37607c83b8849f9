#include "mscount/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mscount {
namespace {

double evaluate(const ScalarFn& f) {
  Tape tape = Tape::inference();
  const Tensor y = f(tape);
  if (y.size() != 1) {
    throw std::invalid_argument("gradient_check: function is not scalar-valued, shape " +
                                y.shape().str());
  }
  return y.item();
}

}  // namespace

GradCheckResult gradient_check(const ScalarFn& f, Tensor x, const GradCheckOptions& options) {
  const double eps = options.epsilon;
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("gradient_check: epsilon must lie in [1e-7, 1e-3]");
  }
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.clear_grad();

  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape tape;
    Tensor y = f(tape);
    if (y.size() != 1) {
      throw std::invalid_argument("gradient_check: function is not scalar-valued, shape " +
                                  y.shape().str());
    }
    tape.backward(y);
    if (x.has_grad()) {
      const auto g = x.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
  }
  x.clear_grad();
  x.set_requires_grad(had_flag);

  const double center = options.skip_kinks ? evaluate(f) : 0.0;
  GradCheckResult result;
  auto data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double plus = evaluate(f);
    data[i] = saved - eps;
    const double minus = evaluate(f);
    data[i] = saved;

    const double numeric = (plus - minus) / (2.0 * eps);
    if (options.skip_kinks) {
      const double forward = (plus - center) / eps;
      const double backward = (center - minus) / eps;
      if (std::abs(forward - backward) >
          options.kink_tolerance * std::max(1.0, std::abs(numeric))) {
        ++result.skipped;
        continue;
      }
    }
    const double a = analytic[i];
    const double err = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    result.max_relative_error = std::max(result.max_relative_error, err);
    ++result.checked;
  }
  return result;
}

GradCheckResult gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               const Tensor& x, double epsilon) {
  Tensor leaf = x.clone();
  GradCheckOptions options;
  options.epsilon = epsilon;
  return gradient_check([&](Tape& tape) { return f(tape, leaf); }, leaf, options);
}

}  // namespace mscount
