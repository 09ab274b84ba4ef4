#include "p2t/layers.hpp"

#include <cmath>

namespace p2t {

double Initializer::truncated_normal(double std) {
  for (;;) {
    const double z = normal_(engine_);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

template <typename T>
Linear<T> make_linear(const std::string& name, std::size_t in, std::size_t out, Initializer& init) {
  return {Parameter<T>(name + ".weight", init.truncated_normal<T>({in, out}, kInitStd)),
          Parameter<T>(name + ".bias", Tensor<T>({out}))};
}

template <typename T>
Conv<T> make_conv(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                  std::size_t padding, Initializer& init) {
  Conv<T> c;
  c.weight = Parameter<T>(name + ".weight", init.truncated_normal<T>({c_out, c_in, kernel, kernel}, kInitStd));
  c.bias = Parameter<T>(name + ".bias", Tensor<T>({c_out}));
  c.stride = stride;
  c.padding = padding;
  return c;
}

template <typename T>
Conv<T> make_depthwise(const std::string& name, std::size_t channels, std::size_t kernel, Initializer& init) {
  Conv<T> c;
  c.weight = Parameter<T>(name + ".weight", init.truncated_normal<T>({channels, 1, kernel, kernel}, kInitStd));
  c.bias = Parameter<T>(name + ".bias", Tensor<T>({channels}));
  c.stride = 1;
  c.padding = kernel / 2;
  c.depthwise = true;
  return c;
}

template <typename T>
LayerNorm<T> make_layer_norm(const std::string& name, std::size_t channels) {
  return {Parameter<T>(name + ".gamma", Tensor<T>({channels}, T{1})),
          Parameter<T>(name + ".beta", Tensor<T>({channels}))};
}

template <typename T>
Var<T> apply(Linear<T>& layer, Var<T> x) {
  auto& g = *x.graph;
  return add(matmul(x, g.parameter(layer.weight)), g.parameter(layer.bias));
}

template <typename T>
Var<T> apply(Conv<T>& layer, Var<T> x) {
  auto& g = *x.graph;
  if (layer.depthwise) return depthwise_conv2d<T>(x, g.parameter(layer.weight), g.parameter(layer.bias), layer.padding);
  return conv2d<T>(x, g.parameter(layer.weight), g.parameter(layer.bias), layer.stride, layer.padding);
}

template <typename T>
Var<T> apply(LayerNorm<T>& layer, Var<T> x) {
  auto& g = *x.graph;
  return layer_norm(x, g.parameter(layer.gamma), g.parameter(layer.beta));
}

template <typename T>
Var<T> activate(Var<T> x, Activation act) {
  return act == Activation::gelu ? gelu(x) : hardswish(x);
}

template <typename T>
Var<T> seq_to_image(Var<T> x, std::size_t h, std::size_t w) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != h * w)
    throw DimensionError("seq_to_image: sequence " + to_string(s) + " does not hold a " + std::to_string(h) + "x" +
                         std::to_string(w) + " grid");
  return permute(reshape(x, {s[0], h, w, s[2]}), {0, 3, 1, 2});
}

template <typename T>
Var<T> image_to_seq(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("image_to_seq: expected [B,C,H,W], got " + to_string(s));
  return reshape(permute(x, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

#define P2T_INSTANTIATE_LAYERS(T)                                                                              \
  template Linear<T> make_linear<T>(const std::string&, std::size_t, std::size_t, Initializer&);               \
  template Conv<T> make_conv<T>(const std::string&, std::size_t, std::size_t, std::size_t, std::size_t,        \
                                std::size_t, Initializer&);                                                    \
  template Conv<T> make_depthwise<T>(const std::string&, std::size_t, std::size_t, Initializer&);              \
  template LayerNorm<T> make_layer_norm<T>(const std::string&, std::size_t);                                   \
  template Var<T> apply(Linear<T>&, Var<T>);                                                                   \
  template Var<T> apply(Conv<T>&, Var<T>);                                                                     \
  template Var<T> apply(LayerNorm<T>&, Var<T>);                                                                \
  template Var<T> activate(Var<T>, Activation);                                                                \
  template Var<T> seq_to_image(Var<T>, std::size_t, std::size_t);                                              \
  template Var<T> image_to_seq(Var<T>);

P2T_INSTANTIATE_LAYERS(float)
P2T_INSTANTIATE_LAYERS(double)

#undef P2T_INSTANTIATE_LAYERS

}  // namespace p2t
