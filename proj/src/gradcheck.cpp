#include "p2t/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace p2t {

namespace {
double evaluate(const ScalarFn& f, const Tensor<double>& x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw NumericError("finite_difference_grad: function returned a non-finite value");
  return v;
}
}  // namespace

Tensor<double> finite_difference_grad(const ScalarFn& f, const Tensor<double>& x, double h) {
  std::vector<std::size_t> all(x.numel());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return finite_difference_grad(f, x, all, h);
}

Tensor<double> finite_difference_grad(const ScalarFn& f, const Tensor<double>& x, std::span<const std::size_t> indices,
                                      double h) {
  if (!(h > 0)) throw Error("finite_difference_grad: step must be positive");
  Tensor<double> grad(x.shape());
  Tensor<double> probe = x;
  for (auto i : indices) {
    if (i >= x.numel()) throw DimensionError("finite_difference_grad: index out of range");
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = evaluate(f, probe);
    probe[i] = orig - h;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric, double floor) {
  if (analytic.shape() != numeric.shape())
    throw DimensionError("max_relative_error: " + to_string(analytic.shape()) + " vs " + to_string(numeric.shape()));
  double worst = 0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace p2t
