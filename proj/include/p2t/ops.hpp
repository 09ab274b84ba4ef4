#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "p2t/autograd.hpp"

namespace p2t {

// Row range [first, last) of output bin `index` when adaptively pooling
// `in` elements into `out` bins: [floor(i*in/out), ceil((i+1)*in/out)).
std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t index, std::size_t in, std::size_t out);

// Elementwise with trailing-axis broadcasting.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> sum(Var<T> a);
// Mean over one axis; the axis is removed from the result.
template <typename T>
Var<T> mean_axis(Var<T> a, int axis);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);
template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes);
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis);

// [.., m, k] x [.., k, n] -> [.., m, n]; leading axes broadcast.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// x [B, C_in, H, W], w [C_out, C_in, kh, kw]; zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t stride, std::size_t padding);
// x [B, C, H, W], w [C, 1, k, k]; stride 1.
template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t padding);

template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w);
// Gradient routes to the first maximal element of each bin.
template <typename T>
Var<T> adaptive_max_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> softmax_rows(Var<T> x);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6));

// x * clamp(x + 3, 0, 6) / 6; left derivative at the kinks.
template <typename T>
Var<T> hardswish(Var<T> x);
// Exact (erf) form.
template <typename T>
Var<T> gelu(Var<T> x);

// Mean softmax cross-entropy of logits [B, K] against integer labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

}  // namespace p2t
