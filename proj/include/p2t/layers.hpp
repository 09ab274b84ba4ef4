#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "p2t/ops.hpp"

namespace p2t {

enum class Activation { hardswish, gelu };

// Seeded parameter initializer. Values are drawn in double precision so
// float and double builds from one seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}
  // Normal(0, std) truncated to [-2 std, 2 std].
  double truncated_normal(double std);

  template <typename T>
  Tensor<T> truncated_normal(Shape shape, double std) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(truncated_normal(std));
    return t;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline constexpr double kInitStd = 0.02;

// y = x W + b with W stored [in, out].
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename T>
struct Conv {
  Parameter<T> weight;  // [C_out, C_in / groups, k, k]
  Parameter<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool depthwise = false;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename T>
Linear<T> make_linear(const std::string& name, std::size_t in, std::size_t out, Initializer& init);
template <typename T>
Conv<T> make_conv(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                  std::size_t padding, Initializer& init);
// [C, 1, k, k] kernel with padding k/2.
template <typename T>
Conv<T> make_depthwise(const std::string& name, std::size_t channels, std::size_t kernel, Initializer& init);
template <typename T>
LayerNorm<T> make_layer_norm(const std::string& name, std::size_t channels);

template <typename T>
Var<T> apply(Linear<T>& layer, Var<T> x);
template <typename T>
Var<T> apply(Conv<T>& layer, Var<T> x);
template <typename T>
Var<T> apply(LayerNorm<T>& layer, Var<T> x);

template <typename T>
Var<T> activate(Var<T> x, Activation act);

// [B, H*W, C] <-> [B, C, H, W]
template <typename T>
Var<T> seq_to_image(Var<T> x, std::size_t h, std::size_t w);
template <typename T>
Var<T> image_to_seq(Var<T> x);

}  // namespace p2t
