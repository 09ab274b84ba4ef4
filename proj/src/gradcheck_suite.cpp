#include "p2t/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>
#include <random>

#include "p2t/backbone.hpp"
#include "p2t/gradcheck.hpp"

namespace p2t {

GradcheckScope gradcheck_scope_from_string(const std::string& name) {
  if (name == "ops") return GradcheckScope::ops;
  if (name == "block") return GradcheckScope::block;
  if (name == "model") return GradcheckScope::model;
  throw ConfigError("unknown gradcheck scope '" + name + "' (expected ops, block, model)");
}

std::string to_string(GradcheckScope scope) {
  switch (scope) {
    case GradcheckScope::ops:
      return "ops";
    case GradcheckScope::block:
      return "block";
    case GradcheckScope::model:
      return "model";
  }
  return "?";
}

bool GradcheckReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
}

namespace {
std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_entries) {
  std::vector<std::size_t> idx;
  if (max_entries == 0 || max_entries >= n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (std::size_t k = 0; k < max_entries; ++k) idx.push_back(k * n / max_entries);
  }
  return idx;
}
}  // namespace

GradcheckCase check_gradients(const std::string& name, const LossBuilder& loss,
                              const std::vector<Parameter<double>*>& params, std::size_t max_entries,
                              double tolerance) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    Var<double> l = loss(g);
    g.backward(l);
    g.commit_parameter_grads();
  }
  struct Probe {
    Tensor<double> analytic, numeric;
    double scale = 0;
  };
  std::vector<Probe> probes;
  double case_scale = 0;
  GradcheckCase result{name, 0.0, 0, false};
  for (auto* p : params) {
    const auto idx = probe_indices(p->value.numel(), max_entries);
    const Tensor<double> original = p->value;
    ScalarFn f = [&](const Tensor<double>& v) {
      p->value = v;
      Graph<double> g;
      return loss(g).value()[0];
    };
    Probe probe{Tensor<double>(original.shape()), finite_difference_grad(f, original, idx, kGradcheckStep)};
    p->value = original;
    for (auto i : idx) {
      probe.analytic[i] = p->grad[i];
      probe.scale = std::max(probe.scale, std::abs(probe.numeric[i]));
    }
    case_scale = std::max(case_scale, probe.scale);
    result.checked += idx.size();
    probes.push_back(std::move(probe));
  }
  for (const auto& probe : probes) {
    const double floor = std::max({1e-3 * probe.scale, 1e-6 * case_scale, 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, max_relative_error(probe.analytic, probe.numeric, floor));
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

namespace {

class Fixture {
 public:
  explicit Fixture(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }

  // Values in (lo, hi) at least `gap` away from every kink.
  Tensor<double> avoiding(Shape shape, double lo, double hi, std::vector<double> kinks, double gap) {
    Tensor<double> t = uniform(std::move(shape), lo, hi);
    for (auto& v : t.data())
      for (double k : kinks)
        if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap) * 2;
    return t;
  }

  Parameter<double>& param(std::string name, Tensor<double> value) {
    owned_.push_back(std::make_unique<Parameter<double>>(std::move(name), std::move(value)));
    return *owned_.back();
  }

  // Random projection weights so the loss depends on every output entry.
  Var<double> weighted_sum(Var<double> out) {
    Var<double> w = out.graph->input(weights(out.shape()));
    return sum(mul(out, w));
  }

  void perturb(const std::vector<Parameter<double>*>& params, double spread) {
    std::uniform_real_distribution<double> d(-spread, spread);
    for (auto* p : params) {
      const bool gamma = p->name.ends_with(".gamma");
      for (auto& v : p->value.data()) v = (gamma ? 1.0 : 0.0) + d(rng_);
    }
  }

 private:
  const Tensor<double>& weights(const Shape& s) {
    for (const auto& [shape, t] : weights_)
      if (shape == s) return t;
    weights_.emplace_back(s, uniform(s));
    return weights_.back().second;
  }

  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Parameter<double>>> owned_;
  std::vector<std::pair<Shape, Tensor<double>>> weights_;
};

using Cases = std::vector<GradcheckCase>;

void unary_case(Cases& out, Fixture& fx, const std::string& name, Tensor<double> x,
                const std::function<Var<double>(Var<double>)>& op) {
  auto& px = fx.param("x", std::move(x));
  out.push_back(check_gradients(name, [&](Graph<double>& g) { return fx.weighted_sum(op(g.parameter(px))); }, {&px}));
}

void binary_case(Cases& out, Fixture& fx, const std::string& name, Tensor<double> a, Tensor<double> b,
                 const std::function<Var<double>(Var<double>, Var<double>)>& op) {
  auto& pa = fx.param("a", std::move(a));
  auto& pb = fx.param("b", std::move(b));
  out.push_back(check_gradients(
      name, [&](Graph<double>& g) { return fx.weighted_sum(op(g.parameter(pa), g.parameter(pb))); }, {&pa, &pb}));
}

std::string shape_tag(const Shape& s) { return to_string(s); }

Cases ops_cases() {
  Cases out;
  Fixture fx(1234);

  for (const auto& [sa, sb] : std::vector<std::pair<Shape, Shape>>{{{2, 3}, {3}}, {{2, 1, 4}, {3, 1}}, {{4}, {4}}}) {
    binary_case(out, fx, "add " + shape_tag(sa) + "+" + shape_tag(sb), fx.uniform(sa), fx.uniform(sb),
                [](auto a, auto b) { return add(a, b); });
    binary_case(out, fx, "mul " + shape_tag(sa) + "*" + shape_tag(sb), fx.uniform(sa), fx.uniform(sb),
                [](auto a, auto b) { return mul(a, b); });
  }
  for (const auto& s : std::vector<Shape>{{3}, {2, 3}, {2, 2, 3}})
    unary_case(out, fx, "scale " + shape_tag(s), fx.uniform(s), [](auto x) { return scale(x, 0.7); });
  for (const auto& s : std::vector<Shape>{{4}, {2, 3}, {2, 2, 3}})
    unary_case(out, fx, "sum " + shape_tag(s), fx.uniform(s), [](auto x) {
      auto& g = *x.graph;
      return mul(sum(x), g.input(Tensor<double>({1}, 1.3)));
    });
  for (const auto& [s, axis] : std::vector<std::pair<Shape, int>>{{{3, 4}, 0}, {{2, 3, 4}, 1}, {{2, 5}, -1}})
    unary_case(out, fx, "mean_axis " + shape_tag(s), fx.uniform(s), [axis](auto x) { return mean_axis(x, axis); });
  for (const auto& [s, axes] : std::vector<std::pair<Shape, std::vector<std::size_t>>>{
           {{2, 3}, {1, 0}}, {{2, 3, 4}, {2, 0, 1}}, {{2, 1, 3, 2}, {0, 2, 1, 3}}})
    unary_case(out, fx, "permute " + shape_tag(s), fx.uniform(s), [axes](auto x) { return permute(x, axes); });
  for (const auto& [s, t] : std::vector<std::pair<Shape, Shape>>{{{6}, {2, 3}}, {{2, 3, 4}, {6, 4}}, {{2, 2, 2}, {8}}})
    unary_case(out, fx, "reshape " + shape_tag(s), fx.uniform(s), [t](auto x) { return reshape(x, t); });
  for (const auto& [sa, sb, axis] : std::vector<std::tuple<Shape, Shape, int>>{
           {{2, 3}, {1, 3}, 0}, {{2, 3, 4}, {2, 1, 4}, 1}, {{2, 2}, {2, 3}, -1}})
    binary_case(out, fx, "concat " + shape_tag(sa) + "|" + shape_tag(sb), fx.uniform(sa), fx.uniform(sb),
                [axis](auto a, auto b) {
                  std::vector<Var<double>> parts{a, b};
                  return concat<double>(parts, axis);
                });

  for (const auto& [sa, sb] : std::vector<std::pair<Shape, Shape>>{
           {{3, 4}, {4, 2}}, {{2, 3, 4}, {4, 5}}, {{2, 1, 3, 4}, {3, 4, 2}}})
    binary_case(out, fx, "matmul " + shape_tag(sa) + "x" + shape_tag(sb), fx.uniform(sa), fx.uniform(sb),
                [](auto a, auto b) { return matmul(a, b); });

  struct ConvSpec {
    Shape x, w;
    std::size_t stride, padding;
  };
  for (const auto& c : std::vector<ConvSpec>{{{1, 2, 5, 5}, {3, 2, 3, 3}, 1, 1},
                                             {{2, 3, 7, 6}, {2, 3, 3, 3}, 2, 1},
                                             {{1, 3, 8, 8}, {4, 3, 7, 7}, 4, 3}}) {
    auto& px = fx.param("x", fx.uniform(c.x));
    auto& pw = fx.param("w", fx.uniform(c.w));
    auto& pb = fx.param("b", fx.uniform({c.w[0]}));
    const auto spec = c;
    out.push_back(check_gradients(
        "conv2d x" + shape_tag(c.x) + " w" + shape_tag(c.w),
        [&, spec](Graph<double>& g) {
          return fx.weighted_sum(
              conv2d<double>(g.parameter(px), g.parameter(pw), g.parameter(pb), spec.stride, spec.padding));
        },
        {&px, &pw, &pb}));
  }
  for (const auto& s : std::vector<Shape>{{1, 3, 4, 4}, {2, 2, 5, 6}, {1, 4, 8, 8}}) {
    auto& px = fx.param("x", fx.uniform(s));
    auto& pw = fx.param("w", fx.uniform({s[1], 1, 3, 3}));
    auto& pb = fx.param("b", fx.uniform({s[1]}));
    out.push_back(check_gradients(
        "depthwise_conv2d " + shape_tag(s),
        [&](Graph<double>& g) {
          return fx.weighted_sum(depthwise_conv2d<double>(g.parameter(px), g.parameter(pw), g.parameter(pb), 1));
        },
        {&px, &pw, &pb}));
  }
  for (const auto& [s, oh, ow] :
       std::vector<std::tuple<Shape, std::size_t, std::size_t>>{{{1, 2, 5, 5}, 2, 2}, {{2, 3, 7, 6}, 3, 4}, {{1, 1, 8, 8}, 3, 3}}) {
    unary_case(out, fx, "adaptive_avg_pool2d " + shape_tag(s), fx.uniform(s),
               [oh, ow](auto x) { return adaptive_avg_pool2d(x, oh, ow); });
    unary_case(out, fx, "adaptive_max_pool2d " + shape_tag(s), fx.uniform(s),
               [oh, ow](auto x) { return adaptive_max_pool2d(x, oh, ow); });
  }
  for (const auto& s : std::vector<Shape>{{3, 5}, {2, 3, 4}, {4, 7}})
    unary_case(out, fx, "softmax_rows " + shape_tag(s), fx.uniform(s, -2, 2), [](auto x) { return softmax_rows(x); });
  for (const auto& s : std::vector<Shape>{{3, 5}, {2, 3, 8}, {4, 2}}) {
    auto& px = fx.param("x", fx.uniform(s, -2, 2));
    auto& pg = fx.param("gamma", fx.uniform({s.back()}, 0.5, 1.5));
    auto& pb = fx.param("beta", fx.uniform({s.back()}));
    out.push_back(check_gradients(
        "layer_norm " + shape_tag(s),
        [&](Graph<double>& g) {
          return fx.weighted_sum(layer_norm(g.parameter(px), g.parameter(pg), g.parameter(pb)));
        },
        {&px, &pg, &pb}));
  }
  for (const auto& s : std::vector<Shape>{{16}, {3, 7}, {2, 3, 5}}) {
    unary_case(out, fx, "hardswish " + shape_tag(s), fx.avoiding(s, -5, 5, {-3.0, 3.0}, 0.01),
               [](auto x) { return hardswish(x); });
    unary_case(out, fx, "gelu " + shape_tag(s), fx.uniform(s, -3, 3), [](auto x) { return gelu(x); });
  }
  for (const auto& [b, k] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 3}, {2, 5}, {6, 2}}) {
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>((i * 7 + 1) % k);
    unary_case(out, fx, "cross_entropy [" + std::to_string(b) + ", " + std::to_string(k) + "]", fx.uniform({b, k}, -2, 2),
               [labels](auto x) { return cross_entropy<double>(x, labels); });
  }
  return out;
}

std::vector<Parameter<double>*> collect(auto& state) {
  std::vector<Parameter<double>*> out;
  state.for_each_parameter([&](Parameter<double>& p) { out.push_back(&p); });
  return out;
}

Cases block_cases() {
  Cases out;
  Fixture fx(99);
  Initializer init(7);
  const GridSize hw{4, 4};
  const std::size_t c = 8;

  auto micro_attn = [&](bool rpe, PoolKind kind) {
    PMHSAConfig cfg;
    cfg.channels = c;
    cfg.heads = 2;
    cfg.pool_ratios = {1, 2};
    cfg.rpe_enabled = rpe;
    cfg.pool_kind = kind;
    return cfg;
  };

  for (const auto& [label, cfg] : std::vector<std::pair<std::string, PMHSAConfig>>{
           {"pmhsa avg+rpe", micro_attn(true, PoolKind::average)},
           {"pmhsa avg, no rpe", micro_attn(false, PoolKind::average)},
           {"pmhsa max+rpe", micro_attn(true, PoolKind::max)}}) {
    auto state = make_pmhsa_state<double>("attn", cfg, init);
    auto params = collect(state);
    fx.perturb(params, 0.4);
    auto& px = fx.param("x", fx.uniform({1, hw.tokens(), c}));
    params.push_back(&px);
    const auto attn_cfg = cfg;
    out.push_back(check_gradients(
        label + " B=1 H=W=4 C=8 heads=2 ratios {1,2}",
        [&, attn_cfg](Graph<double>& g) {
          return fx.weighted_sum(pmhsa_forward(g.parameter(px), hw, state, attn_cfg));
        },
        params));
  }

  for (const auto kind : {FfnKind::irb, FfnKind::mlp}) {
    auto state = make_irb_state<double>("ffn", c, 2, kind, init);
    auto params = collect(state);
    fx.perturb(params, 0.4);
    auto& px = fx.param("x", fx.uniform({1, hw.tokens(), c}, -3, 3));
    params.push_back(&px);
    out.push_back(check_gradients(kind == FfnKind::irb ? "irb E=2" : "mlp ffn E=2",
                                  [&](Graph<double>& g) { return fx.weighted_sum(irb_forward(g.parameter(px), hw, state)); },
                                  params));
  }

  BlockConfig bc;
  bc.attn = micro_attn(true, PoolKind::average);
  bc.expansion = 2;
  for (const auto act : {Activation::hardswish, Activation::gelu}) {
    bc.activation = act;
    auto state = make_block_state<double>("block", bc, init);
    auto params = collect(state);
    fx.perturb(params, 0.4);
    auto& px = fx.param("x", fx.uniform({1, hw.tokens(), c}));
    params.push_back(&px);
    const auto block_cfg = bc;
    out.push_back(check_gradients(
        std::string("block_forward ") + (act == Activation::gelu ? "gelu" : "hardswish") + " B=1 H=W=4 C=8",
        [&, block_cfg](Graph<double>& g) { return fx.weighted_sum(block_forward(g.parameter(px), hw, state, block_cfg)); },
        params));
  }

  for (const auto& [k, s, extent] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{{7, 4, 8}, {3, 2, 6}}) {
    auto state = make_patch_embed<double>("embed", 3, c, k, s, init);
    auto params = collect(state);
    fx.perturb(params, 0.4);
    auto& px = fx.param("x", fx.uniform({1, 3, extent, extent}));
    params.push_back(&px);
    out.push_back(check_gradients(
        "patch_embed k=" + std::to_string(k) + " S=" + std::to_string(s),
        [&](Graph<double>& g) { return fx.weighted_sum(patch_embed(g.parameter(px), state).first); }, params));
  }
  return out;
}

Cases model_cases() {
  Cases out;
  Fixture fx(2024);
  auto cfg = preset("micro");
  cfg.num_classes = 2;
  auto model = build_model<double>(cfg, 11);
  auto params = model.parameters();
  Tensor<double> image = fx.uniform({1, 3, 32, 32}, 0.0, 1.0);
  auto& px = fx.param("image", image);

  out.push_back(check_gradients(
      "micro classifier: d(logits)/d(input) 32x32",
      [&](Graph<double>& g) { return fx.weighted_sum(forward_classify(model, g.parameter(px))); }, {&px}, 768));
  out.push_back(check_gradients(
      "micro classifier: d(logits)/d(parameters)",
      [&](Graph<double>& g) { return fx.weighted_sum(forward_classify(model, g.input(px.value))); }, params, 6));
  return out;
}

}  // namespace

GradcheckReport gradcheck_suite(GradcheckScope scope) {
  GradcheckReport r;
  r.scope = scope;
  switch (scope) {
    case GradcheckScope::ops:
      r.cases = ops_cases();
      break;
    case GradcheckScope::block:
      r.cases = block_cases();
      break;
    case GradcheckScope::model:
      r.cases = model_cases();
      break;
  }
  return r;
}

}  // namespace p2t
