#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "p2t/complexity.hpp"

using namespace p2t;

namespace {

std::uint64_t sum_params(const std::vector<LayerCost>& rows) {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.params;
  return s;
}

std::uint64_t sum_flops(const std::vector<LayerCost>& rows) {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.flops;
  return s;
}

const LayerCost& find(const ComplexityReport& r, const std::string& scope) {
  for (const auto& l : r.layers)
    if (l.scope == scope) return l;
  FAIL("no layer " << scope);
  return r.layers.front();
}

double analytic(std::initializer_list<std::size_t> ratios) {
  double s = 0;
  for (auto p : ratios) s += 1.0 / (static_cast<double>(p) * p);
  return 1.0 / s;
}

}  // namespace

TEST_SUITE("parameter counts") {
  TEST_CASE("closed form equals the built model's tally for every preset") {
    for (const auto& name : preset_names()) {
      INFO(name);
      auto model = build_model<float>(preset(name), 0);
      const auto report = count_params(preset(name));
      CHECK(report.total_params == model.parameter_count());
      CHECK(report.total_flops == 0);
    }
  }

  TEST_CASE("closed form tracks every ablation toggle") {
    auto cfg = preset("micro");
    cfg.rpe = false;
    cfg.ffn = FfnKind::mlp;
    cfg.pool_kind = PoolKind::max;
    auto model = build_model<float>(cfg, 0);
    CHECK(count_params(cfg).total_params == model.parameter_count());
    cfg = preset("micro");
    cfg.pooling = PoolingMode::fixed_sizes;
    auto fixed = build_model<float>(cfg, 0);
    CHECK(count_params(cfg).total_params == fixed.parameter_count());
  }

  TEST_CASE("published parameter totals within 5%") {
    for (const auto& name : {"tiny", "small", "base", "large"}) {
      PresetReference ref;
      REQUIRE(preset_reference(name, ref));
      const double got = static_cast<double>(count_params(preset(name)).total_params);
      INFO(std::string(name) << " " << got);
      CHECK(std::abs(got - ref.params) / ref.params <= 0.05);
    }
  }

  TEST_CASE("a C to C linear layer with bias costs C^2 + C") {
    const auto report = count_flops(preset("micro"), {32, 32});
    const std::size_t widths[] = {8, 16, 24, 32};
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t c = widths[i];
      const auto scope = "stage" + std::to_string(i + 1) + ".block1.attn.proj";
      CHECK(find(report, scope).params == c * c + c);
      // q, k and v are three such layers
      CHECK(find(report, "stage" + std::to_string(i + 1) + ".block1.attn.core").params == 3 * (c * c + c));
    }
  }

  TEST_CASE("parameters do not depend on input size; FLOPs grow with it") {
    const auto cfg = preset("micro");
    const auto a = count_flops(cfg, {32, 32}), b = count_flops(cfg, {64, 64}), c = count_flops(cfg, {64, 96});
    CHECK(a.total_params == b.total_params);
    CHECK(b.total_params == c.total_params);
    CHECK(a.total_params == count_params(cfg).total_params);
    CHECK(a.total_flops < b.total_flops);
    CHECK(b.total_flops < c.total_flops);
  }
}

TEST_SUITE("FLOP counts") {
  TEST_CASE("published FLOP totals at 224 within 10%") {
    for (const auto& name : {"tiny", "small", "base", "large"}) {
      PresetReference ref;
      REQUIRE(preset_reference(name, ref));
      const double got = static_cast<double>(count_flops(preset(name), {224, 224}).total_flops);
      MESSAGE(std::string(name) << ": " << got / 1e9 << "G FLOPs (" << (got - ref.flops) / ref.flops * 100
                                << "% vs published)");
      CHECK(std::abs(got - ref.flops) / ref.flops <= 0.10);
    }
  }

  TEST_CASE("attention core formula") {
    CHECK(attention_core_flops(4, 2, 1) == 24);
    for (std::uint64_t n : {1u, 7u, 49u, 3136u})
      for (std::uint64_t c : {1u, 8u, 64u}) CHECK(attention_core_flops(n, n, c) == 3 * n * c * c + 2 * n * n * c);
  }

  TEST_CASE("the attention row uses the realized pooled length") {
    const auto cfg = preset("micro");
    const auto report = count_flops(cfg, {32, 32});
    const auto grids = cfg.stage_grids({32, 32});
    for (std::size_t i = 0; i < 4; ++i) {
      const auto bc = cfg.block_config(i);
      const std::uint64_t n = grids[i].h * grids[i].w;
      const std::uint64_t m = pooled_tokens(bc.attn, grids[i]);
      CHECK(find(report, "stage" + std::to_string(i + 1) + ".block1.attn.core").flops ==
            attention_core_flops(n, m, bc.attn.channels));
    }
  }

  TEST_CASE("totals equal the sum of stages and the sum of layers") {
    for (const auto& name : preset_names()) {
      const auto r = count_flops(preset(name), {224, 224});
      INFO(name);
      CHECK(sum_params(r.per_stage) == r.total_params);
      CHECK(sum_flops(r.per_stage) == r.total_flops);
      CHECK(sum_params(r.layers) == r.total_params);
      CHECK(sum_flops(r.layers) == r.total_flops);
      CHECK(r.per_stage.size() == 5);
    }
  }

  TEST_CASE("CSV lists layers, stages and a total under the documented header") {
    const auto r = count_flops(preset("nano"), {32, 32});
    const auto csv = format_report_csv(r);
    std::istringstream in(csv);
    std::string line, last;
    std::getline(in, line);
    CHECK(line == "scope,params,flops");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      last = line;
      CHECK(std::count(line.begin(), line.end(), ',') == 2);
    }
    CHECK(rows == r.layers.size() + r.per_stage.size() + 1);
    CHECK(last == "total," + std::to_string(r.total_params) + "," + std::to_string(r.total_flops));
    const auto doubled = format_report_csv(r, 2);
    CHECK(doubled.find("total," + std::to_string(r.total_params) + "," + std::to_string(2 * r.total_flops)) !=
          std::string::npos);
  }
}

TEST_SUITE("squeeze ratio") {
  TEST_CASE("published squeezed-ratio column") {
    struct Row {
      std::vector<std::size_t> ratios;
      long printed;
    };
    for (const auto& row : std::vector<Row>{
             {{24}, 576}, {{16}, 256}, {{12}, 144}, {{8}, 64}, {{12, 24}, 115}, {{12, 16, 20, 24}, 66}}) {
      const auto r = squeeze_ratio(row.ratios);
      CHECK(std::lround(r.analytic_ratio) == row.printed);
      CHECK_FALSE(r.realized_m.has_value());
    }
    CHECK(squeeze_ratio(std::vector<std::size_t>{12, 24}).analytic_ratio == doctest::Approx(115.2));
    CHECK(std::round(squeeze_ratio(std::vector<std::size_t>{12, 16, 20, 24}).analytic_ratio * 10) / 10 ==
          doctest::Approx(66.3));
  }

  TEST_CASE("analytic ratio grows with each pooling ratio") {
    std::vector<std::size_t> ratios{2, 3, 5, 7};
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      double previous = squeeze_ratio(ratios).analytic_ratio;
      for (int k = 0; k < 5; ++k) {
        ++ratios[i];
        const double now = squeeze_ratio(ratios).analytic_ratio;
        CHECK(now > previous);
        previous = now;
      }
    }
  }

  TEST_CASE("divisible geometries realize the analytic ratio exactly") {
    const auto r = squeeze_ratio(std::vector<std::size_t>{2, 4}, GridSize{8, 8});
    REQUIRE(r.realized_m.has_value());
    CHECK(*r.realized_m == 16 + 4);
    for (const auto& ratios : std::vector<std::vector<std::size_t>>{{1, 2, 3, 4}, {3, 4, 5, 6}, {2, 4}, {12, 24}})
      for (std::size_t k : {1u, 2u, 3u}) {
        const std::size_t lcm = std::accumulate(ratios.begin(), ratios.end(), std::size_t{1},
                                                [](std::size_t a, std::size_t b) { return std::lcm(a, b); });
        const GridSize hw{lcm * k, lcm * (k + 1)};
        const auto s = squeeze_ratio(ratios, hw);
        CHECK(*s.realized_ratio == doctest::Approx(s.analytic_ratio).epsilon(1e-12));
      }
  }

  TEST_CASE("rounded geometries stay within the half-token discretization bound") {
    // Each level's extent is within 0.5 of H/p, so M lies between the sums of
    // (H/p - 1/2)(W/p - 1/2) and (H/p + 1/2)(W/p + 1/2).
    int checked = 0;
    for (const auto& ratios : std::vector<std::vector<std::size_t>>{{12, 16, 20, 24}, {6, 8, 10, 12}, {3, 4, 5, 6}, {2, 3}})
      for (std::size_t h = 2 * ratios.back(); h <= 120; h += 7)
        for (std::size_t w = 2 * ratios.back(); w <= 120; w += 11) {
          const auto s = squeeze_ratio(ratios, GridSize{h, w});
          double lo = 0, hi = 0;
          for (auto p : ratios) {
            const double a = static_cast<double>(h) / p, b = static_cast<double>(w) / p;
            lo += (a - 0.5) * (b - 0.5);
            hi += (a + 0.5) * (b + 0.5);
          }
          const double n = static_cast<double>(h * w);
          CHECK(*s.realized_m >= lo - 1e-9);
          CHECK(*s.realized_m <= hi + 1e-9);
          CHECK(*s.realized_ratio <= n / lo + 1e-9);
          CHECK(*s.realized_ratio >= n / hi - 1e-9);
          ++checked;
        }
    CHECK(checked > 100);
  }

  TEST_CASE("realized M is the attention module's pooled length") {
    for (const auto& ratios : std::vector<std::vector<std::size_t>>{{12, 16, 20, 24}, {1, 2, 3, 4}, {2, 5}})
      for (GridSize hw : {GridSize{56, 56}, GridSize{28, 42}, GridSize{33, 61}}) {
        PMHSAConfig cfg;
        cfg.channels = 8;
        cfg.heads = 1;
        cfg.pool_ratios = ratios;
        CHECK(*squeeze_ratio(ratios, hw).realized_m == pooled_tokens(cfg, hw));
      }
    CHECK(*squeeze_ratio(std::vector<std::size_t>{12, 16, 20, 24}, GridSize{56, 56}).realized_m == 54);
  }

  TEST_CASE("closed form") {
    CHECK(squeeze_ratio(std::vector<std::size_t>{1}).analytic_ratio == 1.0);
    CHECK(squeeze_ratio(std::vector<std::size_t>{3, 4, 5, 6}).analytic_ratio == doctest::Approx(analytic({3, 4, 5, 6})));
  }
}

TEST_SUITE("attention comparison") {
  TEST_CASE("variant specs parse and label") {
    CHECK(parse_attention_variant("vanilla").kind == AttentionVariant::Kind::vanilla);
    const auto p = parse_attention_variant("pyramid:12,16,20,24");
    CHECK(p.kind == AttentionVariant::Kind::pyramid);
    CHECK(p.ratios == std::vector<std::size_t>{12, 16, 20, 24});
    CHECK(parse_attention_variant("pool:8").ratios == std::vector<std::size_t>{8});
    CHECK(parse_attention_variant(p.label()) == p);
    CHECK_THROWS_AS(parse_attention_variant("pool:"), ConfigError);
    CHECK_THROWS_AS(parse_attention_variant("pool:0"), ConfigError);
    CHECK_THROWS_AS(parse_attention_variant("linear"), ConfigError);
  }

  TEST_CASE("vanilla reduces to 3NC^2 + 2N^2C") {
    const std::vector<AttentionVariant> v{parse_attention_variant("vanilla")};
    const auto rows = compare_attention(3136, 64, v);
    CHECK(rows[0].m == 3136);
    CHECK(rows[0].core_flops == 3ull * 3136 * 64 * 64 + 2ull * 3136 * 3136 * 64);
  }

  TEST_CASE("pyramid pooling costs about as much as single pooling with ratio 8") {
    const std::vector<AttentionVariant> v{parse_attention_variant("pool:8"),
                                          parse_attention_variant("pyramid:12,16,20,24")};
    const auto rows = compare_attention(3136, 64, v);
    CHECK(rows[0].m == 49);
    CHECK(rows[1].m == 54);
    const double ratio = static_cast<double>(rows[1].core_flops) / static_cast<double>(rows[0].core_flops);
    CHECK(ratio <= 2.0);
    CHECK(ratio >= 0.5);
    CHECK(rows[1].core_flops == attention_core_flops(3136, 54, 64));
  }

  TEST_CASE("a one-token sequence differs only through the pooled length") {
    const std::vector<AttentionVariant> v{parse_attention_variant("vanilla"), parse_attention_variant("pool:8"),
                                          parse_attention_variant("pyramid:12,16,20,24")};
    const auto rows = compare_attention(1, 16, v);
    CHECK(rows[0].core_flops == 3 * 16 * 16 + 2 * 16);
    CHECK(rows[1].core_flops == rows[0].core_flops);
    // every pyramid level keeps one token
    CHECK(rows[2].m == 4);
    CHECK(rows[2].core_flops == attention_core_flops(1, 4, 16));
  }

  TEST_CASE("non-square sequences round each level to N / p^2") {
    const std::vector<AttentionVariant> v{parse_attention_variant("pool:4")};
    CHECK(compare_attention(200, 8, v)[0].m == 13);  // 200 / 16 = 12.5 rounds away from zero
    CHECK(compare_attention(144, 8, v)[0].m == 9);   // 12x12 grid pools to 3x3
  }
}
