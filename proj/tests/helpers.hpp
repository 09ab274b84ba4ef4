#pragma once

#include <random>
#include <vector>

#include "p2t/autograd.hpp"
#include "p2t/ops.hpp"

namespace testing {

using p2t::Shape;
using p2t::Tensor;

inline std::vector<double> vec(const Tensor<double>& t) { return t.storage(); }

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Evaluates `op` on constant inputs without recording gradients.
template <typename F>
Tensor<double> eval(F&& op, const std::vector<Tensor<double>>& inputs) {
  p2t::Graph<double> g;
  std::vector<p2t::Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  return op(vars).value();
}

}  // namespace testing

namespace testing {

// Spreads every parameter away from its initial value so tests exercise
// non-trivial weights: LayerNorm gammas near 1, everything else uniform.
template <typename State>
void randomize(State& state, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-spread, spread);
  state.for_each_parameter([&](p2t::Parameter<double>& p) {
    const bool gamma = p.name.ends_with(".gamma");
    for (auto& v : p.value.data()) v = (gamma ? 1.0 : 0.0) + d(rng);
  });
}

template <typename State>
void zero_all(State& state) {
  state.for_each_parameter([](p2t::Parameter<double>& p) { p.value.fill(0.0); });
}

}  // namespace testing
