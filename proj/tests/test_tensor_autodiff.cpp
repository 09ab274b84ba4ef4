#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "p2t/gradcheck.hpp"
#include "p2t/gradcheck_suite.hpp"

using namespace p2t;
using testing::eval;
using testing::random_tensor;
using testing::vec;
using V = std::vector<Var<double>>;

TEST_SUITE("tensor") {
  TEST_CASE("extent product matches storage and extents are positive") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.size(-1) == 4);
    CHECK_THROWS_AS(Tensor<float>({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
  }

  TEST_CASE("row-major indexing") {
    Tensor<double> t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    CHECK(t.at({1, 2}) == 5);
    CHECK(t.at({0, 1}) == 1);
    CHECK(t.reshaped({3, 2}).at({2, 0}) == 4);
  }

  TEST_CASE("non-finite values are reported") {
    Tensor<double> t({2}, std::vector<double>{1.0, NAN});
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.check_finite("probe"), NumericError);
  }
}

TEST_SUITE("matmul") {
  TEST_CASE("identity") {
    auto out = eval([](V v) { return matmul(v[0], v[1]); },
                    {Tensor<double>({2, 2}, {1, 0, 0, 1}), Tensor<double>({2, 2}, {3, 4, 5, 6})});
    CHECK(vec(out) == std::vector<double>{3, 4, 5, 6});
  }

  TEST_CASE("row times column") {
    auto out = eval([](V v) { return matmul(v[0], v[1]); }, {Tensor<double>({1, 2}, {1, 2}), Tensor<double>({2, 1}, {3, 4})});
    CHECK(out.shape() == Shape{1, 1});
    CHECK(out[0] == 11);
  }

  TEST_CASE("random 3x4 by 4x2 matches the triple-loop oracle") {
    auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2);
    auto out = eval([](V v) { return matmul(v[0], v[1]); }, {a, b});
    CHECK(oracle::max_rel_diff(vec(out), oracle::matmul(vec(a), vec(b), 3, 4, 2)) < 1e-6);
  }

  TEST_CASE("batch broadcast") {
    auto a = random_tensor({2, 3, 4}, 3), b = random_tensor({4, 5}, 4);
    auto out = eval([](V v) { return matmul(v[0], v[1]); }, {a, b});
    CHECK(out.shape() == Shape{2, 3, 5});
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> slice(a.storage().begin() + i * 12, a.storage().begin() + (i + 1) * 12);
      std::vector<double> got(out.storage().begin() + i * 15, out.storage().begin() + (i + 1) * 15);
      CHECK(oracle::max_rel_diff(got, oracle::matmul(slice, vec(b), 3, 4, 5)) < 1e-12);
    }
  }

  TEST_CASE("inner extent mismatch names both shapes") {
    try {
      eval([](V v) { return matmul(v[0], v[1]); }, {Tensor<double>({2, 3}), Tensor<double>({4, 2})});
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2, 3]") != std::string::npos);
      CHECK(msg.find("[4, 2]") != std::string::npos);
    }
  }
}

TEST_SUITE("conv2d") {
  auto conv = [](Tensor<double> x, Tensor<double> w, std::optional<Tensor<double>> b, std::size_t stride,
                 std::size_t pad) {
    Graph<double> g;
    std::optional<Var<double>> bias;
    if (b) bias = g.input(*b);
    return Tensor<double>(conv2d<double>(g.input(x), g.input(w), bias, stride, pad).value());
  };

  TEST_CASE("identity kernel") {
    auto x = random_tensor({1, 1, 4, 4}, 5);
    CHECK(conv(x, Tensor<double>({1, 1, 1, 1}, 1.0), std::nullopt, 1, 0) == x);
  }

  TEST_CASE("counting case") {
    auto out = conv(Tensor<double>({1, 1, 4, 4}, 1.0), Tensor<double>({1, 1, 2, 2}, 1.0), std::nullopt, 2, 0);
    CHECK(out.shape() == Shape{1, 1, 2, 2});
    for (double v : out.data()) CHECK(v == 4.0);
  }

  TEST_CASE("random cases match the direct-loop oracle") {
    const std::vector<oracle::ConvDims> cases{{1, 2, 5, 5, 3, 3, 3, 1, 1},
                                              {2, 3, 7, 6, 4, 3, 3, 2, 1},
                                              {1, 3, 8, 8, 4, 7, 7, 4, 3},
                                              {2, 4, 8, 8, 2, 1, 1, 1, 0},
                                              {1, 2, 6, 8, 3, 2, 3, 3, 0}};
    std::uint64_t seed = 10;
    for (const auto& d : cases) {
      auto x = random_tensor({d.b, d.cin, d.h, d.w}, seed++);
      auto w = random_tensor({d.cout, d.cin, d.kh, d.kw}, seed++);
      auto b = random_tensor({d.cout}, seed++);
      auto out = conv(x, w, b, d.stride, d.pad);
      CHECK(out.shape() == Shape{d.b, d.cout, d.out_h(), d.out_w()});
      CHECK(oracle::max_rel_diff(vec(out), oracle::conv2d(vec(x), vec(w), vec(b), d), 1e-9) < 1e-5);
    }
  }

  TEST_CASE("kernel larger than the padded input") {
    CHECK_THROWS_AS(conv(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 5, 5}), std::nullopt, 1, 1), DimensionError);
  }
}

TEST_SUITE("depthwise_conv2d") {
  auto dw = [](Tensor<double> x, Tensor<double> w, std::optional<Tensor<double>> b) {
    Graph<double> g;
    std::optional<Var<double>> bias;
    if (b) bias = g.input(*b);
    return Tensor<double>(depthwise_conv2d<double>(g.input(x), g.input(w), bias, 1).value());
  };

  TEST_CASE("centre-one kernel is the identity") {
    auto x = random_tensor({2, 3, 5, 4}, 20);
    Tensor<double> w({3, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) w.at({c, 0, 1, 1}) = 1.0;
    CHECK(dw(x, w, std::nullopt) == x);
  }

  TEST_CASE("constant input with an all-ones kernel gives 9v inside") {
    auto out = dw(Tensor<double>({1, 2, 5, 5}, 0.5), Tensor<double>({2, 1, 3, 3}, 1.0), std::nullopt);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t j = 1; j < 4; ++j) CHECK(out.at({0, c, i, j}) == doctest::Approx(4.5));
  }

  TEST_CASE("random cases match the per-channel oracle") {
    std::uint64_t seed = 30;
    for (const auto& s : std::vector<Shape>{{1, 3, 4, 4}, {2, 2, 5, 6}, {1, 4, 8, 8}, {2, 5, 3, 7}}) {
      auto x = random_tensor(s, seed++), w = random_tensor({s[1], 1, 3, 3}, seed++), b = random_tensor({s[1]}, seed++);
      CHECK(oracle::max_rel_diff(vec(dw(x, w, b)), oracle::depthwise3x3(vec(x), vec(w), vec(b), s[0], s[1], s[2], s[3]),
                                 1e-9) < 1e-5);
    }
  }

  TEST_CASE("output channel depends only on its input channel") {
    auto x = random_tensor({1, 3, 4, 4}, 40), w = random_tensor({3, 1, 3, 3}, 41);
    auto base = dw(x, w, std::nullopt);
    for (std::size_t i = 0; i < 16; ++i) x[16 + i] += 1.0;  // perturb channel 1 only
    auto moved = dw(x, w, std::nullopt);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(moved[i] == base[i]);
      CHECK(moved[32 + i] == base[32 + i]);
    }
  }

  TEST_CASE("channel mismatch") {
    CHECK_THROWS_AS(dw(Tensor<double>({1, 3, 4, 4}), Tensor<double>({2, 1, 3, 3}), std::nullopt), DimensionError);
  }
}

TEST_SUITE("adaptive pooling") {
  auto pool = [](Tensor<double> x, std::size_t oh, std::size_t ow, bool max = false) {
    return eval([&](V v) { return max ? adaptive_max_pool2d(v[0], oh, ow) : adaptive_avg_pool2d(v[0], oh, ow); }, {x});
  };

  TEST_CASE("bin boundaries agree with the enumerator") {
    for (std::size_t in = 1; in <= 13; ++in)
      for (std::size_t out = 1; out <= in; ++out)
        for (std::size_t i = 0; i < out; ++i) {
          const auto [lo, hi] = adaptive_bin(i, in, out);
          const auto members = oracle::bin_members(i, in, out);
          REQUIRE(!members.empty());
          CHECK(lo == members.front());
          CHECK(hi == members.back() + 1);
          CHECK(members.size() == hi - lo);
        }
  }

  TEST_CASE("full-size target is the identity") {
    auto x = random_tensor({2, 3, 5, 4}, 50);
    CHECK(pool(x, 5, 4) == x);
    CHECK(pool(x, 5, 4, true) == x);
  }

  TEST_CASE("constants are preserved for any target") {
    Tensor<double> x({1, 2, 7, 5}, 7.0);
    for (std::size_t oh = 1; oh <= 7; ++oh)
      for (std::size_t ow = 1; ow <= 5; ++ow) {
        const auto out = pool(x, oh, ow);
        for (double v : out.data()) CHECK(v == doctest::Approx(7.0));
      }
  }

  TEST_CASE("3x3 ramp pooled to 2x2 uses overlapping floor/ceil bins") {
    // Bins along each axis are rows {0, 1} and {1, 2}; the middle row is shared.
    Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto out = pool(x, 2, 2);
    CHECK(vec(out) == std::vector<double>{3, 4, 6, 7});
    CHECK(vec(out) == oracle::adaptive_pool(vec(x), 1, 1, 3, 3, 2, 2, false));
  }

  TEST_CASE("random inputs match the enumerator for both kinds") {
    auto x = random_tensor({2, 3, 7, 6}, 51);
    for (auto [oh, ow] : std::vector<std::pair<std::size_t, std::size_t>>{{3, 4}, {2, 2}, {5, 1}, {7, 6}})
      for (bool max : {false, true})
        CHECK(oracle::max_abs_diff(vec(pool(x, oh, ow, max)), oracle::adaptive_pool(vec(x), 2, 3, 7, 6, oh, ow, max)) <
              1e-12);
  }

  TEST_CASE("global mean is preserved when bins are equal") {
    auto x = random_tensor({1, 2, 8, 6}, 52);
    auto out = pool(x, 4, 3);
    const double in_mean = std::accumulate(x.data().begin(), x.data().end(), 0.0) / x.numel();
    const double out_mean = std::accumulate(out.data().begin(), out.data().end(), 0.0) / out.numel();
    CHECK(out_mean == doctest::Approx(in_mean).epsilon(1e-12));
  }

  TEST_CASE("backward conserves gradient mass") {
    for (auto [oh, ow] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 2}, {3, 4}, {5, 5}}) {
      Graph<double> g;
      auto x = g.input(random_tensor({1, 2, 7, 6}, 53), true);
      auto y = adaptive_avg_pool2d(x, oh, ow);
      auto r = g.input(random_tensor(y.shape(), 54));
      g.backward(sum(mul(y, r)));
      const double in_mass = std::accumulate(x.grad().data().begin(), x.grad().data().end(), 0.0);
      const double out_mass = std::accumulate(r.value().data().begin(), r.value().data().end(), 0.0);
      CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-12));
    }
  }

  TEST_CASE("target outside the input") {
    CHECK_THROWS_AS(pool(Tensor<double>({1, 1, 3, 3}), 4, 1), DimensionError);
    CHECK_THROWS_AS(pool(Tensor<double>({1, 1, 3, 3}), 0, 1), DimensionError);
  }
}

TEST_SUITE("softmax_rows") {
  auto sm = [](Tensor<double> x) { return eval([](V v) { return softmax_rows(v[0]); }, {x}); };

  TEST_CASE("single element") { CHECK(sm(Tensor<double>({1}, {3.7}))[0] == 1.0); }

  TEST_CASE("uniform row") {
    const auto out = sm(Tensor<double>({4}, 0.0));
    for (double v : out.data()) CHECK(v == 0.25);
  }

  TEST_CASE("large logits stay finite") {
    auto out = sm(Tensor<double>({2}, {1000, 0}));
    // exp(-1000) underflows in long double as well; the exact answer is 1 - 5e-435.
    const long double tail = std::exp(-1000.0L);
    CHECK(std::abs(out[0] - static_cast<double>(1.0L / (1.0L + tail))) < 1e-6);
    CHECK(std::abs(out[1] - static_cast<double>(tail / (1.0L + tail))) < 1e-6);
    CHECK(out.all_finite());
    Graph<float> gf;
    CHECK(softmax_rows(gf.input(Tensor<float>({2}, {1000.f, 0.f}))).value()[0] == doctest::Approx(1.0f));
  }

  TEST_CASE("rows sum to one and ignore a constant shift") {
    auto x = random_tensor({5, 9}, 60, -4, 4);
    auto y = sm(x);
    Tensor<double> shifted = x;
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t j = 0; j < 9; ++j) shifted[r * 9 + j] += static_cast<double>(r) * 13.5 - 20;
    auto ys = sm(shifted);
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        total += y[r * 9 + j];
        CHECK(y[r * 9 + j] >= 0);
        CHECK(std::abs(y[r * 9 + j] - ys[r * 9 + j]) < 1e-6);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_SUITE("layer_norm") {
  auto ln = [](Tensor<double> x) {
    const std::size_t c = x.size(-1);
    return eval([](V v) { return layer_norm(v[0], v[1], v[2]); }, {x, Tensor<double>({c}, 1.0), Tensor<double>({c}, 0.0)});
  };

  TEST_CASE("constant vector maps to zeros") {
    const auto out = ln(Tensor<double>({6}, 3.25));
    for (double v : out.data()) CHECK(v == 0.0);
  }

  TEST_CASE("[1, -1] is already normalized") {
    auto out = ln(Tensor<double>({2}, {1, -1}));
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-6));
  }

  TEST_CASE("random rows match the statistics oracle") {
    auto x = random_tensor({4, 16}, 70, -3, 5);
    auto out = ln(x);
    CHECK(oracle::max_abs_diff(vec(out), oracle::layer_norm(vec(x), 16)) < 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < 16; ++j) mean += out[r * 16 + j] / 16;
      for (std::size_t j = 0; j < 16; ++j) var += (out[r * 16 + j] - mean) * (out[r * 16 + j] - mean) / 16;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_SUITE("activations") {
  auto hs = [](double x) { return eval([](V v) { return hardswish(v[0]); }, {Tensor<double>({1}, {x})})[0]; };
  auto hs_grad = [](double x) {
    Graph<double> g;
    auto v = g.input(Tensor<double>({1}, {x}), true);
    g.backward(sum(hardswish(v)));
    return v.grad()[0];
  };

  TEST_CASE("hardswish values") {
    CHECK(hs(0) == 0);
    CHECK(hs(3) == 3);
    CHECK(hs(-3) == 0);
    CHECK(hs(1) == doctest::Approx(2.0 / 3.0));
    CHECK(hs(-7) == 0);
    CHECK(hs(9) == 9);
  }

  TEST_CASE("hardswish takes the left derivative at its kinks") {
    CHECK(hs_grad(-3) == 0.0);
    CHECK(hs_grad(3) == doctest::Approx(1.5));  // (2*3 + 3) / 6
    CHECK(hs_grad(-5) == 0.0);
    CHECK(hs_grad(5) == 1.0);
    CHECK(hs_grad(0) == doctest::Approx(0.5));
  }

  TEST_CASE("gelu uses the erf form") {
    for (double x : {-2.0, -0.5, 0.0, 0.7, 3.0}) {
      const double expect = 0.5 * x * (1 + std::erf(x / std::sqrt(2.0)));
      CHECK(eval([](V v) { return gelu(v[0]); }, {Tensor<double>({1}, {x})})[0] == doctest::Approx(expect));
    }
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("matches the log-sum-exp definition") {
    auto logits = random_tensor({3, 4}, 80, -2, 2);
    const std::vector<int> labels{2, 0, 3};
    Graph<double> g;
    const double loss = cross_entropy<double>(g.input(logits), labels).value()[0];
    double expect = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      double z = 0;
      for (std::size_t j = 0; j < 4; ++j) z += std::exp(logits[r * 4 + j]);
      expect += (std::log(z) - logits[r * 4 + labels[r]]) / 3;
    }
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("label out of range") {
    Graph<double> g;
    const std::vector<int> labels{0, 5};
    CHECK_THROWS_AS(cross_entropy<double>(g.input(Tensor<double>({2, 3})), labels), DimensionError);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum gives ones") {
    Graph<double> g;
    auto x = g.input(random_tensor({2, 3, 2}, 90), true);
    g.backward(sum(x));
    for (double v : x.grad().data()) CHECK(v == 1.0);
  }

  TEST_CASE("sum of squares gives 2x") {
    Graph<double> g;
    auto x = g.input(Tensor<double>({3}, {1, 2, 3}), true);
    g.backward(sum(mul(x, x)));
    CHECK(vec(x.grad()) == std::vector<double>{2, 4, 6});
  }

  TEST_CASE("repeated backward accumulates leaf gradients") {
    Graph<double> g;
    auto x = g.input(Tensor<double>({2}, {1, -2}), true);
    auto loss = sum(mul(x, x));
    g.backward(loss);
    g.backward(loss);
    CHECK(vec(x.grad()) == std::vector<double>{4, -8});
  }

  TEST_CASE("non-scalar loss is rejected") {
    Graph<double> g;
    auto x = g.input(Tensor<double>({2}, 1.0), true);
    CHECK_THROWS_AS(g.backward(x), DimensionError);
  }

  TEST_CASE("recorded inputs precede their consumers") {
    Graph<double> g;
    auto a = g.input(random_tensor({2, 2}, 91), true);
    auto b = g.input(random_tensor({2, 2}, 92), true);
    auto loss = sum(softmax_rows(add(matmul(a, b), a)));
    for (std::size_t id = 0; id < g.size(); ++id)
      for (auto in : g.inputs(id)) CHECK(in < id);
    CHECK(loss.id == g.size() - 1);
  }

  TEST_CASE("parameter gradients commit into Parameter::grad") {
    Parameter<double> p("w", Tensor<double>({2}, {0.5, -1.5}));
    for (int rep = 0; rep < 2; ++rep) {
      Graph<double> g;
      auto w = g.parameter(p);
      CHECK(g.parameter(p).id == w.id);
      g.backward(sum(mul(w, w)));
      g.commit_parameter_grads();
    }
    CHECK(vec(p.grad) == std::vector<double>{2.0, -6.0});
  }

  TEST_CASE("operations refuse to produce non-finite values") {
    Graph<double> g;
    auto x = g.input(Tensor<double>({1}, {1e200}));
    CHECK_THROWS_AS(mul(x, x), NumericError);
  }
}

TEST_SUITE("finite differences") {
  TEST_CASE("sum gives ones") {
    auto g = finite_difference_grad([](const Tensor<double>& x) { return std::accumulate(x.data().begin(), x.data().end(), 0.0); },
                                    random_tensor({5}, 100));
    for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("sum of squares at [1, 2]") {
    auto g = finite_difference_grad(
        [](const Tensor<double>& x) { return x[0] * x[0] + x[1] * x[1]; }, Tensor<double>({2}, {1, 2}), 1e-4);
    CHECK(std::abs(g[0] - 2) < 1e-7);
    CHECK(std::abs(g[1] - 4) < 1e-7);
  }

  TEST_CASE("non-finite objective is an error") {
    CHECK_THROWS_AS(finite_difference_grad([](const Tensor<double>&) { return NAN; }, Tensor<double>({1}, 0.0)),
                    NumericError);
  }

  TEST_CASE("agrees with backward on a two-layer composite") {
    const auto w1 = random_tensor({4, 6}, 101), w2 = random_tensor({6, 3}, 102), x0 = random_tensor({2, 4}, 103);
    Graph<double> g2;
    auto x2 = g2.input(x0, true);
    auto weighted = [&](Graph<double>& gg, Var<double> xv) {
      auto h = gelu(matmul(xv, gg.input(w1)));
      return sum(mul(softmax_rows(matmul(h, gg.input(w2))), gg.input(Tensor<double>({3}, {1.0, -2.0, 0.5}))));
    };
    g2.backward(weighted(g2, x2));
    auto numeric = finite_difference_grad(
        [&](const Tensor<double>& xv) {
          Graph<double> gg;
          return weighted(gg, gg.input(xv)).value()[0];
        },
        x0);
    CHECK(max_relative_error(x2.grad(), numeric) < 1e-4);
  }
}

TEST_CASE("gradcheck ops scope covers every differentiable op on three shapes") {
  const auto report = gradcheck_suite(GradcheckScope::ops);
  const std::vector<std::string> ops{"add",       "mul",        "scale",   "sum",          "mean_axis",
                                     "permute",   "reshape",    "concat",  "matmul",       "conv2d",
                                     "depthwise_conv2d", "adaptive_avg_pool2d", "adaptive_max_pool2d",
                                     "softmax_rows", "layer_norm", "hardswish", "gelu", "cross_entropy"};
  for (const auto& op : ops) {
    int count = 0;
    for (const auto& c : report.cases)
      if (c.name.rfind(op + " ", 0) == 0) ++count;
    INFO(op);
    CHECK(count >= 3);
  }
  for (const auto& c : report.cases) {
    INFO(c.name << " max rel error " << c.max_rel_error);
    CHECK(c.passed);
    CHECK(c.max_rel_error < 1e-4);
  }
  CHECK(report.passed());
}
