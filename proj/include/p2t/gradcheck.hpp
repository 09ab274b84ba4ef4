#pragma once

#include <functional>
#include <span>

#include "p2t/tensor.hpp"

namespace p2t {

using ScalarFn = std::function<double(const Tensor<double>&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Tensor<double> finite_difference_grad(const ScalarFn& f, const Tensor<double>& x, double h = 1e-4);

// Central differences for a subset of flat indices; other entries are zero.
Tensor<double> finite_difference_grad(const ScalarFn& f, const Tensor<double>& x, std::span<const std::size_t> indices,
                                      double h = 1e-4);

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps entries whose
// true gradient is ~0 from dominating through finite-difference noise.
double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric, double floor = 1e-3);

}  // namespace p2t
