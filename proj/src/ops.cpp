#include "p2t/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace p2t {

std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t index, std::size_t in, std::size_t out) {
  const std::size_t first = index * in / out;
  const std::size_t last = ((index + 1) * in + out - 1) / out;
  return {first, last};
}

namespace {

std::string shapes_message(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

// Output shape plus per-operand element strides over the output axes, with
// zero stride along broadcast axes.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;

  Broadcast(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    out.assign(rank, 1);
    stride_a.assign(rank, 0);
    stride_b.assign(rank, 0);
    std::size_t sa = 1;
    std::size_t sb = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      const std::size_t axis = rank - 1 - r;
      const std::size_t ea = r < a.size() ? a[a.size() - 1 - r] : 1;
      const std::size_t eb = r < b.size() ? b[b.size() - 1 - r] : 1;
      if (ea != eb && ea != 1 && eb != 1) throw DimensionError(shapes_message(op, a, b));
      out[axis] = std::max(ea, eb);
      stride_a[axis] = ea == 1 ? 0 : sa;
      stride_b[axis] = eb == 1 ? 0 : sb;
      sa *= ea;
      sb *= eb;
    }
  }

  // Calls f(out_index, a_offset, b_offset) for every output element in order.
  template <typename F>
  void for_each(F&& f) const {
    const std::size_t total = numel(out);
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0;
    std::size_t ob = 0;
    for (std::size_t i = 0; i < total; ++i) {
      f(i, oa, ob);
      for (std::size_t axis = rank; axis-- > 0;) {
        ++idx[axis];
        oa += stride_a[axis];
        ob += stride_b[axis];
        if (idx[axis] < out[axis]) break;
        oa -= stride_a[axis] * idx[axis];
        ob -= stride_b[axis] * idx[axis];
        idx[axis] = 0;
      }
    }
  }
};

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      T acc{0};
      const T* grow = g + i * n;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* g, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t batch, c_in, h, w, c_out, kh, kw, stride, padding, groups, out_h, out_w;

  std::size_t in_per_group() const { return c_in / groups; }
  std::size_t out_per_group() const { return c_out / groups; }

  // Output columns [first, last) whose input column ox*stride + kx - padding is inside [0, extent).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t extent, std::size_t out) const {
    const long pad = static_cast<long>(padding);
    const long kk = static_cast<long>(k);
    const long s = static_cast<long>(stride);
    long first = pad - kk > 0 ? (pad - kk + s - 1) / s : 0;
    long last = (static_cast<long>(extent) - 1 + pad - kk);
    last = last < 0 ? 0 : last / s + 1;
    first = std::min<long>(first, static_cast<long>(out));
    last = std::min<long>(last, static_cast<long>(out));
    if (last < first) last = first;
    return {static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
  }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding,
                           std::size_t groups, const char* op) {
  if (x.size() != 4 || w.size() != 4) throw DimensionError(shapes_message(op, x, w));
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be positive");
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], stride, padding, groups, 0, 0};
  if (g.c_in % groups != 0 || g.c_out % groups != 0 || w[1] != g.c_in / groups)
    throw DimensionError(std::string(op) + ": channel mismatch between input " + to_string(x) + " and kernel " +
                         to_string(w));
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw)
    throw DimensionError(std::string(op) + ": kernel " + to_string(w) + " larger than padded input " + to_string(x));
  g.out_h = (g.h + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

template <typename T>
Tensor<T> conv_forward(const ConvGeometry& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  Tensor<T> out({g.batch, g.c_out, g.out_h, g.out_w});
  const std::size_t plane_in = g.h * g.w;
  const std::size_t plane_out = g.out_h * g.out_w;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      T* o = out.data().data() + (b * g.c_out + co) * plane_out;
      if (bias) std::fill(o, o + plane_out, (*bias)[co]);
      const std::size_t group = co / g.out_per_group();
      for (std::size_t cl = 0; cl < g.in_per_group(); ++cl) {
        const std::size_t ci = group * g.in_per_group() + cl;
        const T* xin = x.data().data() + (b * g.c_in + ci) * plane_in;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = g.valid_range(ky, g.h, g.out_h);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T wv = w[((co * g.in_per_group() + cl) * g.kh + ky) * g.kw + kx];
            const auto [ox0, ox1] = g.valid_range(kx, g.w, g.out_w);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.padding;
              const T* xrow = xin + iy * g.w;
              T* orow = o + oy * g.out_w;
              for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xrow[ox * g.stride + kx - g.padding];
            }
          }
        }
      }
    }
  return out;
}

template <typename T>
void conv_backward(const ConvGeometry& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad,
                   Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t plane_in = g.h * g.w;
  const std::size_t plane_out = g.out_h * g.out_w;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const T* go = grad.data().data() + (b * g.c_out + co) * plane_out;
      if (db) {
        T acc{0};
        for (std::size_t i = 0; i < plane_out; ++i) acc += go[i];
        (*db)[co] += acc;
      }
      const std::size_t group = co / g.out_per_group();
      for (std::size_t cl = 0; cl < g.in_per_group(); ++cl) {
        const std::size_t ci = group * g.in_per_group() + cl;
        const T* xin = x.data().data() + (b * g.c_in + ci) * plane_in;
        T* dxin = dx ? dx->data().data() + (b * g.c_in + ci) * plane_in : nullptr;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = g.valid_range(ky, g.h, g.out_h);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::size_t widx = ((co * g.in_per_group() + cl) * g.kh + ky) * g.kw + kx;
            const T wv = w[widx];
            const auto [ox0, ox1] = g.valid_range(kx, g.w, g.out_w);
            T wacc{0};
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.padding;
              const T* grow = go + oy * g.out_w;
              const T* xrow = xin + iy * g.w;
              if (dxin) {
                T* dxrow = dxin + iy * g.w;
                for (std::size_t ox = ox0; ox < ox1; ++ox) dxrow[ox * g.stride + kx - g.padding] += wv * grow[ox];
              }
              for (std::size_t ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xrow[ox * g.stride + kx - g.padding];
            }
            if (dw) (*dw)[widx] += wacc;
          }
        }
      }
    }
}

// Dense (groups == 1) convolution as one GEMM over the whole batch:
// col [C_in*kh*kw, B*P] holds the receptive fields, P = out_h*out_w.
template <typename T>
std::vector<T> im2col(const ConvGeometry& g, const T* x) {
  const std::size_t plane = g.out_h * g.out_w, cols = g.batch * plane;
  std::vector<T> col(g.c_in * g.kh * g.kw * cols, T{0});
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [oy0, oy1] = g.valid_range(ky, g.h, g.out_h);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [ox0, ox1] = g.valid_range(kx, g.w, g.out_w);
        T* row = col.data() + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* xin = x + (b * g.c_in + ci) * g.h * g.w;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const T* xrow = xin + (oy * g.stride + ky - g.padding) * g.w;
            T* dst = row + b * plane + oy * g.out_w;
            for (std::size_t ox = ox0; ox < ox1; ++ox) dst[ox] = xrow[ox * g.stride + kx - g.padding];
          }
        }
      }
    }
  return col;
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t plane = g.out_h * g.out_w, cols = g.batch * plane;
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [oy0, oy1] = g.valid_range(ky, g.h, g.out_h);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [ox0, ox1] = g.valid_range(kx, g.w, g.out_w);
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* dxin = dx + (b * g.c_in + ci) * g.h * g.w;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            T* dxrow = dxin + (oy * g.stride + ky - g.padding) * g.w;
            const T* src = row + b * plane + oy * g.out_w;
            for (std::size_t ox = ox0; ox < ox1; ++ox) dxrow[ox * g.stride + kx - g.padding] += src[ox];
          }
        }
      }
    }
}

template <typename T>
Tensor<T> dense_conv_forward(const ConvGeometry& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  const std::size_t plane = g.out_h * g.out_w, cols = g.batch * plane, k = g.c_in * g.kh * g.kw;
  const auto col = im2col(g, x.data().data());
  std::vector<T> mat(g.c_out * cols, T{0});
  gemm_nn(g.c_out, cols, k, w.data().data(), col.data(), mat.data());
  Tensor<T> out({g.batch, g.c_out, g.out_h, g.out_w});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const T* src = mat.data() + co * cols + b * plane;
      T* dst = out.data().data() + (b * g.c_out + co) * plane;
      const T shift = bias ? (*bias)[co] : T{0};
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
    }
  return out;
}

template <typename T>
void dense_conv_backward(const ConvGeometry& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad,
                         Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t plane = g.out_h * g.out_w, cols = g.batch * plane, k = g.c_in * g.kh * g.kw;
  std::vector<T> gmat(g.c_out * cols);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const T* src = grad.data().data() + (b * g.c_out + co) * plane;
      std::copy(src, src + plane, gmat.data() + co * cols + b * plane);
    }
  if (db)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      T acc{0};
      for (std::size_t j = 0; j < cols; ++j) acc += gmat[co * cols + j];
      (*db)[co] += acc;
    }
  if (dw) {
    const auto col = im2col(g, x.data().data());
    gemm_nt(g.c_out, cols, k, gmat.data(), col.data(), dw->data().data());
  }
  if (dx) {
    std::vector<T> dcol(k * cols, T{0});
    gemm_tn(g.c_out, cols, k, w.data().data(), gmat.data(), dcol.data());
    col2im(g, dcol.data(), dx->data().data());
  }
}

template <typename T>
Var<T> conv_impl(const char* op, Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t stride,
                 std::size_t padding, std::size_t groups) {
  const auto g = conv_geometry(x.shape(), w.shape(), stride, padding, groups, op);
  if (bias && bias->shape() != Shape{g.c_out})
    throw DimensionError(std::string(op) + ": bias shape " + to_string(bias->shape()) + " does not match " +
                         std::to_string(g.c_out) + " output channels");
  const Tensor<T>* bias_value = bias ? &bias->value() : nullptr;
  Tensor<T> out = groups == 1 ? dense_conv_forward(g, x.value(), w.value(), bias_value)
                              : conv_forward(g, x.value(), w.value(), bias_value);
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return x.graph->record(op, std::move(out), std::move(inputs), [g, has_bias](BackwardContext<T>& ctx) {
    const auto& xv = ctx.input(0);
    const auto& wv = ctx.input(1);
    std::optional<Tensor<T>> dx, dw, db;
    if (ctx.needs_grad(0)) dx.emplace(xv.shape());
    if (ctx.needs_grad(1)) dw.emplace(wv.shape());
    if (has_bias && ctx.needs_grad(2)) db.emplace(Shape{g.c_out});
    auto* backward = g.groups == 1 ? &dense_conv_backward<T> : &conv_backward<T>;
    backward(g, xv, wv, ctx.grad_output(), dx ? &*dx : nullptr, dw ? &*dw : nullptr, db ? &*db : nullptr);
    if (dx) ctx.accumulate(0, std::move(*dx));
    if (dw) ctx.accumulate(1, std::move(*dw));
    if (db) ctx.accumulate(2, std::move(*db));
  });
}

template <typename T>
void check_pool_target(const Shape& s, std::size_t out_h, std::size_t out_w, const char* op) {
  if (s.size() != 4) throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + to_string(s));
  if (out_h < 1 || out_w < 1 || out_h > s[2] || out_w > s[3])
    throw DimensionError(std::string(op) + ": target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " outside [1,1].." + std::to_string(s[2]) + "x" + std::to_string(s[3]));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Broadcast bc(a.shape(), b.shape(), "add");
  Tensor<T> out(bc.out);
  const auto& av = a.value();
  const auto& bv = b.value();
  bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = av[oa] + bv[ob]; });
  return a.graph->record("add", std::move(out), {a, b}, [bc](BackwardContext<T>& ctx) {
    const auto& g = ctx.grad_output();
    if (ctx.needs_grad(0)) {
      Tensor<T> ga(ctx.input(0).shape());
      bc.for_each([&](std::size_t i, std::size_t oa, std::size_t) { ga[oa] += g[i]; });
      ctx.accumulate(0, std::move(ga));
    }
    if (ctx.needs_grad(1)) {
      Tensor<T> gb(ctx.input(1).shape());
      bc.for_each([&](std::size_t i, std::size_t, std::size_t ob) { gb[ob] += g[i]; });
      ctx.accumulate(1, std::move(gb));
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Broadcast bc(a.shape(), b.shape(), "mul");
  Tensor<T> out(bc.out);
  const auto& av = a.value();
  const auto& bv = b.value();
  bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = av[oa] * bv[ob]; });
  return a.graph->record("mul", std::move(out), {a, b}, [bc](BackwardContext<T>& ctx) {
    const auto& g = ctx.grad_output();
    const auto& av = ctx.input(0);
    const auto& bv = ctx.input(1);
    if (ctx.needs_grad(0)) {
      Tensor<T> ga(av.shape());
      bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) { ga[oa] += g[i] * bv[ob]; });
      ctx.accumulate(0, std::move(ga));
    }
    if (ctx.needs_grad(1)) {
      Tensor<T> gb(bv.shape());
      bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) { gb[ob] += g[i] * av[oa]; });
      ctx.accumulate(1, std::move(gb));
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.graph->record("scale", std::move(out), {a}, [factor](BackwardContext<T>& ctx) {
    Tensor<T> g = ctx.grad_output();
    for (auto& v : g.data()) v *= factor;
    ctx.accumulate(0, std::move(g));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc{0};
  for (auto v : a.value().data()) acc += v;
  return a.graph->record("sum", Tensor<T>(Shape{1}, acc), {a}, [](BackwardContext<T>& ctx) {
    ctx.accumulate(0, Tensor<T>(ctx.input(0).shape(), ctx.grad_output()[0]));
  });
}

template <typename T>
Var<T> mean_axis(Var<T> a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size(), "mean_axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != ax) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const auto& x = a.value();
  const T inv = T{1} / static_cast<T>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i] * inv;
  return a.graph->record("mean_axis", std::move(out), {a}, [outer, inner, n, inv](BackwardContext<T>& ctx) {
    const auto& g = ctx.grad_output();
    Tensor<T> gx(ctx.input(0).shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] = g[o * inner + i] * inv;
    ctx.accumulate(0, std::move(gx));
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.graph->record("reshape", std::move(out), {a}, [](BackwardContext<T>& ctx) {
    ctx.accumulate(0, ctx.grad_output().reshaped(ctx.input(0).shape()));
  });
}

namespace {
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  const std::size_t rank = s.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  const std::size_t total = x.numel();
  for (std::size_t i = 0; i < total; ++i) {
    out[i] = x[off];
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}
}  // namespace

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes) {
  const std::size_t rank = a.shape().size();
  std::vector<std::size_t> check = axes;
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> iota(rank);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  if (check != iota) throw DimensionError("permute: axes are not a permutation of " + to_string(a.shape()));
  std::vector<std::size_t> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) inverse[axes[i]] = i;
  Tensor<T> out = permute_tensor(a.value(), axes);
  return a.graph->record("permute", std::move(out), {a}, [inverse](BackwardContext<T>& ctx) {
    ctx.accumulate(0, permute_tensor(ctx.grad_output(), inverse));
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) throw DimensionError(shapes_message("concat", first, s));
    out_shape[ax] += s[ax];
    extents.push_back(s[ax]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total_ax = out_shape[ax];
  Tensor<T> out(out_shape);
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    const std::size_t chunk = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data().data() + o * chunk, chunk, out.data().data() + (o * total_ax + start) * inner);
    start += extents[p];
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].graph->record(
      "concat", std::move(out), std::move(inputs), [extents, outer, inner, total_ax](BackwardContext<T>& ctx) {
        const auto& g = ctx.grad_output();
        std::size_t start = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
          if (ctx.needs_grad(p)) {
            Tensor<T> gp(ctx.input(p).shape());
            const std::size_t chunk = extents[p] * inner;
            for (std::size_t o = 0; o < outer; ++o)
              std::copy_n(g.data().data() + (o * total_ax + start) * inner, chunk, gp.data().data() + o * chunk);
            ctx.accumulate(p, std::move(gp));
          }
          start += extents[p];
        }
      });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2])
    throw DimensionError(shapes_message("matmul", sa, sb));
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Broadcast bc(batch_a, batch_b, "matmul");
  Shape out_shape = bc.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  {
    const T* av = a.value().data().data();
    const T* bv = b.value().data().data();
    T* ov = out.data().data();
    bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) {
      gemm_nn(m, n, k, av + oa * m * k, bv + ob * k * n, ov + i * m * n);
    });
  }
  return a.graph->record("matmul", std::move(out), {a, b}, [bc, m, n, k](BackwardContext<T>& ctx) {
    const T* g = ctx.grad_output().data().data();
    const auto& av = ctx.input(0);
    const auto& bv = ctx.input(1);
    if (ctx.needs_grad(0)) {
      Tensor<T> ga(av.shape());
      bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) {
        gemm_nt(m, n, k, g + i * m * n, bv.data().data() + ob * k * n, ga.data().data() + oa * m * k);
      });
      ctx.accumulate(0, std::move(ga));
    }
    if (ctx.needs_grad(1)) {
      Tensor<T> gb(bv.shape());
      bc.for_each([&](std::size_t i, std::size_t oa, std::size_t ob) {
        gemm_tn(m, n, k, av.data().data() + oa * m * k, g + i * m * n, gb.data().data() + ob * k * n);
      });
      ctx.accumulate(1, std::move(gb));
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t stride, std::size_t padding) {
  return conv_impl("conv2d", x, w, bias, stride, padding, 1);
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != 1 || ws[0] != xs[1])
    throw DimensionError(shapes_message("depthwise_conv2d", xs, ws));
  return conv_impl("depthwise_conv2d", x, w, bias, 1, padding, xs[1]);
}

template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  check_pool_target<T>(s, out_h, out_w, "adaptive_avg_pool2d");
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out({s[0], s[1], out_h, out_w});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto [r0, r1] = adaptive_bin(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto [c0, c1] = adaptive_bin(j, w, out_w);
        T acc{0};
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) acc += xv[(p * h + r) * w + c];
        out[(p * out_h + i) * out_w + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  return x.graph->record("adaptive_avg_pool2d", std::move(out), {x},
                         [planes, h, w, out_h, out_w](BackwardContext<T>& ctx) {
                           const auto& g = ctx.grad_output();
                           Tensor<T> gx(ctx.input(0).shape());
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t i = 0; i < out_h; ++i) {
                               const auto [r0, r1] = adaptive_bin(i, h, out_h);
                               for (std::size_t j = 0; j < out_w; ++j) {
                                 const auto [c0, c1] = adaptive_bin(j, w, out_w);
                                 const T share = g[(p * out_h + i) * out_w + j] /
                                                 static_cast<T>((r1 - r0) * (c1 - c0));
                                 for (std::size_t r = r0; r < r1; ++r)
                                   for (std::size_t c = c0; c < c1; ++c) gx[(p * h + r) * w + c] += share;
                               }
                             }
                           ctx.accumulate(0, std::move(gx));
                         });
}

template <typename T>
Var<T> adaptive_max_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  check_pool_target<T>(s, out_h, out_w, "adaptive_max_pool2d");
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out({s[0], s[1], out_h, out_w});
  std::vector<std::size_t> argmax(out.numel());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto [r0, r1] = adaptive_bin(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto [c0, c1] = adaptive_bin(j, w, out_w);
        std::size_t best = (p * h + r0) * w + c0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) {
            const std::size_t idx = (p * h + r) * w + c;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * out_h + i) * out_w + j;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  return x.graph->record("adaptive_max_pool2d", std::move(out), {x}, [argmax](BackwardContext<T>& ctx) {
    const auto& g = ctx.grad_output();
    Tensor<T> gx(ctx.input(0).shape());
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
    ctx.accumulate(0, std::move(gx));
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().numel() / n;
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return x.graph->record("softmax_rows", std::move(out), {x}, [rows, n](BackwardContext<T>& ctx) {
    const auto& y = ctx.output();
    const auto& g = ctx.grad_output();
    Tensor<T> gx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
    }
    ctx.accumulate(0, std::move(gx));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("layer_norm: affine parameters " + to_string(gamma.shape()) + " do not match " +
                         to_string(x.shape()));
  const std::size_t rows = x.value().numel() / c;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * c;
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(c);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (in[j] - mean) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return x.graph->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext<T>& ctx) {
        const auto& g = ctx.grad_output();
        const auto& gv = ctx.input(1);
        if (ctx.needs_grad(0)) {
          Tensor<T> gx(xhat.shape());
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d{0}, mean_dh{0};
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              mean_d += d;
              mean_dh += d * xhat[r * c + j];
            }
            mean_d /= static_cast<T>(c);
            mean_dh /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              gx[r * c + j] = inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dh);
            }
          }
          ctx.accumulate(0, std::move(gx));
        }
        if (ctx.needs_grad(1) || ctx.needs_grad(2)) {
          Tensor<T> dg(Shape{c}), db(Shape{c});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += g[r * c + j] * xhat[r * c + j];
              db[j] += g[r * c + j];
            }
          if (ctx.needs_grad(1)) ctx.accumulate(1, std::move(dg));
          if (ctx.needs_grad(2)) ctx.accumulate(2, std::move(db));
        }
      });
}

template <typename T>
Var<T> hardswish(Var<T> x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = xv[i];
    out[i] = v * std::clamp(v + T{3}, T{0}, T{6}) / T{6};
  }
  return x.graph->record("hardswish", std::move(out), {x}, [](BackwardContext<T>& ctx) {
    const auto& xv = ctx.input(0);
    const auto& g = ctx.grad_output();
    Tensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const T v = xv[i];
      const T d = v <= T{-3} ? T{0} : (v <= T{3} ? (T{2} * v + T{3}) / T{6} : T{1});
      gx[i] = g[i] * d;
    }
    ctx.accumulate(0, std::move(gx));
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(0.5) * xv[i] * (T{1} + std::erf(xv[i] * inv_sqrt2));
  return x.graph->record("gelu", std::move(out), {x}, [](BackwardContext<T>& ctx) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    const auto& xv = ctx.input(0);
    const auto& g = ctx.grad_output();
    Tensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] = g[i] * (cdf + v * pdf);
    }
    ctx.accumulate(0, std::move(gx));
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size())
    throw DimensionError("cross_entropy: logits " + to_string(s) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t batch = s[0], k = s[1];
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw DimensionError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
  const auto& z = logits.value();
  Tensor<T> probs(s);
  T loss{0};
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data().data() + b * k;
    const T mx = *std::max_element(row, row + k);
    T total{0};
    for (std::size_t j = 0; j < k; ++j) total += (probs[b * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] /= total;
    loss += mx + std::log(total) - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.graph->record("cross_entropy", Tensor<T>(Shape{1}, loss), {logits},
                              [probs = std::move(probs), lab = std::move(lab), batch, k](BackwardContext<T>& ctx) {
                                const T g = ctx.grad_output()[0] / static_cast<T>(batch);
                                Tensor<T> gz = probs;
                                for (std::size_t b = 0; b < batch; ++b) gz[b * k + lab[b]] -= T{1};
                                for (auto& v : gz.data()) v *= g;
                                ctx.accumulate(0, std::move(gz));
                              });
}

#define P2T_INSTANTIATE_OPS(T)                                                                           \
  template Var<T> add(Var<T>, Var<T>);                                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                                   \
  template Var<T> scale(Var<T>, T);                                                                      \
  template Var<T> sum(Var<T>);                                                                           \
  template Var<T> mean_axis(Var<T>, int);                                                                \
  template Var<T> reshape(Var<T>, Shape);                                                                \
  template Var<T> permute(Var<T>, std::vector<std::size_t>);                                            \
  template Var<T> concat(std::span<const Var<T>>, int);                                                  \
  template Var<T> matmul(Var<T>, Var<T>);                                                                \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);              \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t);                 \
  template Var<T> adaptive_avg_pool2d(Var<T>, std::size_t, std::size_t);                                 \
  template Var<T> adaptive_max_pool2d(Var<T>, std::size_t, std::size_t);                                 \
  template Var<T> softmax_rows(Var<T>);                                                                  \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                 \
  template Var<T> hardswish(Var<T>);                                                                     \
  template Var<T> gelu(Var<T>);                                                                          \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);

P2T_INSTANTIATE_OPS(float)
P2T_INSTANTIATE_OPS(double)

#undef P2T_INSTANTIATE_OPS

}  // namespace p2t
