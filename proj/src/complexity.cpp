#include "p2t/complexity.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "p2t/ops.hpp"

namespace p2t {

namespace {

using u64 = std::uint64_t;

class Ledger {
 public:
  explicit Ledger(bool with_flops) : with_flops_(with_flops) {}

  void add(std::string scope, u64 params, u64 flops) {
    report_.layers.push_back({std::move(scope), params, with_flops_ ? flops : 0});
    current_.params += params;
    current_.flops += with_flops_ ? flops : 0;
  }
  void close(std::string group) {
    current_.scope = std::move(group);
    report_.total_params += current_.params;
    report_.total_flops += current_.flops;
    report_.per_stage.push_back(current_);
    current_ = {};
  }
  ComplexityReport take(GridSize input) {
    report_.input = input;
    return std::move(report_);
  }

 private:
  bool with_flops_;
  ComplexityReport report_;
  LayerCost current_;
};

u64 conv_params(u64 c_in, u64 c_out, u64 k, u64 groups) { return c_out * (c_in / groups) * k * k + c_out; }
u64 conv_flops(u64 out_elems, u64 c_in, u64 k, u64 groups) { return out_elems * c_in * k * k / groups; }
u64 linear_params(u64 in, u64 out) { return in * out + out; }

// Sum of bin areas: every input element visits each bin it belongs to once.
u64 pooling_adds(GridSize in, GridSize out, u64 channels) {
  u64 rows = 0, cols = 0;
  for (std::size_t i = 0; i < out.h; ++i) {
    const auto [a, b] = adaptive_bin(i, in.h, out.h);
    rows += b - a;
  }
  for (std::size_t j = 0; j < out.w; ++j) {
    const auto [a, b] = adaptive_bin(j, in.w, out.w);
    cols += b - a;
  }
  return rows * cols * channels;
}

void account_block(Ledger& l, const std::string& p, const BlockConfig& bc, GridSize grid) {
  const u64 c = bc.attn.channels;
  const u64 n = grid.tokens();
  const auto levels = pooled_sizes(bc.attn, grid);
  u64 m = 0;
  u64 pool = 0;
  for (const auto& lv : levels) {
    m += lv.tokens();
    pool += pooling_adds(grid, lv, c);
  }
  l.add(p + ".attn.pool", 0, pool);
  if (bc.attn.rpe_enabled) {
    u64 rpe = 0;
    for (const auto& lv : levels) rpe += conv_flops(lv.tokens() * c, c, 3, c) + lv.tokens() * c;
    l.add(p + ".attn.rpe", conv_params(c, c, 3, c), rpe);
  }
  l.add(p + ".attn.pool_norm", 2 * c, m * c);
  l.add(p + ".attn.core", 3 * linear_params(c, c), attention_core_flops(n, m, c));
  l.add(p + ".attn.softmax", 0, 2 * bc.attn.heads * n * m);
  l.add(p + ".attn.proj", linear_params(c, c), n * c * c);
  l.add(p + ".norm1", 2 * c, 2 * n * c);

  const u64 hidden = c * bc.expansion;
  l.add(p + ".ffn.expand", conv_params(c, hidden, 1, 1), conv_flops(n * hidden, c, 1, 1) + n * hidden);
  if (bc.ffn == FfnKind::irb)
    l.add(p + ".ffn.dw", conv_params(hidden, hidden, 3, hidden), conv_flops(n * hidden, hidden, 3, hidden) + n * hidden);
  l.add(p + ".ffn.project", conv_params(hidden, c, 1, 1), conv_flops(n * c, hidden, 1, 1));
  l.add(p + ".norm2", 2 * c, 2 * n * c);
}

ComplexityReport account(const ModelConfig& cfg, GridSize input, bool with_flops) {
  cfg.validate();
  Ledger l(with_flops);
  const auto grids = cfg.stage_grids(input);
  u64 c_prev = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& sc = cfg.stages[i];
    const std::string stage = "stage" + std::to_string(i + 1);
    const u64 k = i == 0 ? cfg.stem_kernel : cfg.embed_kernel;
    const u64 n = grids[i].tokens();
    l.add(stage + ".embed.conv", conv_params(c_prev, sc.channels, k, 1), conv_flops(n * sc.channels, c_prev, k, 1));
    l.add(stage + ".embed.norm", 2 * sc.channels, n * sc.channels);
    const auto bc = cfg.block_config(i);
    for (std::size_t b = 0; b < sc.depth; ++b) account_block(l, stage + ".block" + std::to_string(b + 1), bc, grids[i]);
    l.close(stage);
    c_prev = sc.channels;
  }
  const u64 n_last = grids.back().tokens();
  l.add("head.norm", 2 * c_prev, n_last * c_prev);
  l.add("head.pool", 0, n_last * c_prev);
  l.add("head.fc", linear_params(c_prev, cfg.num_classes), c_prev * cfg.num_classes);
  l.close("head");
  return l.take(input);
}

std::string with_commas(u64 v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string join(std::span<const std::size_t> values, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? sep : "") + std::to_string(values[i]);
  return s;
}

}  // namespace

ComplexityReport count_params(const ModelConfig& cfg) {
  return account(cfg, {cfg.image_size, cfg.image_size}, false);
}

ComplexityReport count_flops(const ModelConfig& cfg, GridSize input) {
  const std::size_t mult = cfg.total_stride();
  if (input.h == 0 || input.w == 0 || input.h % mult != 0 || input.w % mult != 0)
    throw DimensionError("input extent " + std::to_string(input.h) + "x" + std::to_string(input.w) +
                         " must be a positive multiple of " + std::to_string(mult));
  return account(cfg, input, true);
}

std::uint64_t attention_core_flops(std::uint64_t n, std::uint64_t m, std::uint64_t c) {
  return (n + 2 * m) * c * c + 2 * n * m * c;
}

SqueezeReport squeeze_ratio(std::span<const std::size_t> pool_ratios, std::optional<GridSize> hw) {
  if (pool_ratios.empty()) throw ConfigError("squeeze_ratio: at least one pooling ratio is required");
  SqueezeReport r;
  r.pool_ratios.assign(pool_ratios.begin(), pool_ratios.end());
  double inv = 0;
  for (auto p : pool_ratios) {
    if (p == 0) throw ConfigError("squeeze_ratio: pooling ratios must be positive");
    inv += 1.0 / (static_cast<double>(p) * static_cast<double>(p));
  }
  r.analytic_ratio = 1.0 / inv;
  if (hw) {
    PMHSAConfig probe;
    probe.pool_ratios = r.pool_ratios;
    r.hw = hw;
    r.realized_m = pooled_tokens(probe, *hw);
    r.realized_ratio = static_cast<double>(hw->tokens()) / static_cast<double>(*r.realized_m);
  }
  return r;
}

std::string AttentionVariant::label() const {
  switch (kind) {
    case Kind::vanilla:
      return "vanilla";
    case Kind::single_pool:
      return "pool:" + join(ratios, ",");
    case Kind::pyramid:
      return "pyramid:" + join(ratios, ",");
  }
  return "?";
}

AttentionVariant parse_attention_variant(std::string_view spec) {
  auto parse_list = [&](std::string_view body) {
    std::vector<std::size_t> out;
    while (!body.empty()) {
      const auto comma = body.find(',');
      const auto tok = body.substr(0, comma);
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size() || v == 0)
        throw ConfigError("attention variant '" + std::string(spec) + "': ratios must be positive integers");
      out.push_back(v);
      if (comma == std::string_view::npos) break;
      body.remove_prefix(comma + 1);
    }
    if (out.empty()) throw ConfigError("attention variant '" + std::string(spec) + "': missing ratios");
    return out;
  };
  if (spec == "vanilla") return {AttentionVariant::Kind::vanilla, {}};
  if (spec.starts_with("pool:")) {
    auto r = parse_list(spec.substr(5));
    if (r.size() != 1) throw ConfigError("attention variant '" + std::string(spec) + "': pool takes one ratio");
    return {AttentionVariant::Kind::single_pool, r};
  }
  if (spec.starts_with("pyramid:")) {
    AttentionVariant v{AttentionVariant::Kind::pyramid, parse_list(spec.substr(8))};
    PMHSAConfig probe;
    probe.channels = 1;
    probe.pool_ratios = v.ratios;
    probe.validate();
    return v;
  }
  throw ConfigError("unknown attention variant '" + std::string(spec) + "' (expected vanilla, pool:<p>, pyramid:<p,...>)");
}

std::vector<AttentionCostRow> compare_attention(std::uint64_t n, std::uint64_t c,
                                                std::span<const AttentionVariant> variants) {
  if (n == 0 || c == 0) throw ConfigError("compare_attention: N and C must be positive");
  const auto side = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  const bool square = side * side == n;
  std::vector<AttentionCostRow> rows;
  for (const auto& v : variants) {
    std::uint64_t m = 0;
    if (v.kind == AttentionVariant::Kind::vanilla) {
      m = n;
    } else {
      for (auto p : v.ratios) {
        std::uint64_t level = 0;
        if (square) {
          const auto e = std::max<std::uint64_t>(pooled_extent(side, p), 1);
          level = e * e;
        } else {
          level = static_cast<std::uint64_t>(std::llround(static_cast<double>(n) / static_cast<double>(p * p)));
        }
        m += std::max<std::uint64_t>(level, 1);
      }
    }
    rows.push_back({v.label(), m, attention_core_flops(n, m, c)});
  }
  return rows;
}

std::string format_architecture(const ModelConfig& cfg, GridSize input) {
  const auto grids = cfg.stage_grids(input);
  std::ostringstream os;
  os << "model: " << cfg.name << "  (input " << input.h << "x" << input.w << ", " << cfg.num_classes << " classes)\n";
  os << std::left << std::setw(8) << "stage" << std::setw(12) << "input" << std::setw(22) << "operator" << std::setw(7)
     << "C" << std::setw(7) << "heads" << std::setw(5) << "E" << std::setw(7) << "depth"
     << "pool ratios\n";
  os << std::setw(8) << "stem" << std::setw(12) << (std::to_string(input.h) + "x" + std::to_string(input.w))
     << std::setw(22)
     << (std::to_string(cfg.stem_kernel) + "x" + std::to_string(cfg.stem_kernel) + " conv, S=" +
         std::to_string(cfg.stem_stride))
     << std::setw(7) << cfg.stages[0].channels << std::setw(7) << "-" << std::setw(5) << "-" << std::setw(7) << "-"
     << "-\n";
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const auto bc = cfg.block_config(i);
    std::string op = "P-MHSA + ";
    op += cfg.ffn == FfnKind::irb ? "IRB" : "MLP";
    std::string ratios = join(bc.attn.pool_ratios, ",");
    if (cfg.pooling == PoolingMode::fixed_sizes) ratios = "sizes " + ratios;
    os << std::setw(8) << (std::to_string(i + 1)) << std::setw(12)
       << (std::to_string(grids[i].h) + "x" + std::to_string(grids[i].w)) << std::setw(22) << op << std::setw(7)
       << s.channels << std::setw(7) << s.heads << std::setw(5) << s.expansion << std::setw(7) << s.depth << ratios
       << "\n";
  }
  os << std::setw(8) << "head" << std::setw(12) << "1x1" << "GAP, " << cfg.num_classes << "-d FC\n";
  return os.str();
}

namespace {
std::string human(double v) {
  const char* unit = "";
  for (const char* u : {"K", "M", "G"}) {
    if (v < 1000) break;
    v /= 1000;
    unit = u;
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(*unit ? 2 : 0) << v << unit;
  return os.str();
}
}  // namespace

std::string format_report_table(const ComplexityReport& report, bool per_layer, std::uint64_t flop_scale) {
  std::ostringstream os;
  std::size_t width = 10;
  if (per_layer)
    for (const auto& l : report.layers) width = std::max(width, l.scope.size() + 2);
  auto row = [&](const std::string& scope, u64 params, u64 flops) {
    os << std::left << std::setw(static_cast<int>(width)) << scope << std::right << std::setw(16) << with_commas(params)
       << std::setw(20) << with_commas(flops * flop_scale) << "\n";
  };
  os << std::left << std::setw(static_cast<int>(width)) << "scope" << std::right << std::setw(16) << "params"
     << std::setw(20) << (flop_scale == 1 ? "flops (MAC)" : "flops (2xMAC)") << "\n";
  if (per_layer)
    for (const auto& l : report.layers) row(l.scope, l.params, l.flops);
  for (const auto& s : report.per_stage) row(s.scope, s.params, s.flops);
  row("total", report.total_params, report.total_flops);
  os << "params " << human(static_cast<double>(report.total_params)) << ", flops "
     << human(static_cast<double>(report.total_flops * flop_scale)) << " at " << report.input.h << "x" << report.input.w
     << "\n";
  return os.str();
}

std::string format_report_csv(const ComplexityReport& report, std::uint64_t flop_scale) {
  std::ostringstream os;
  os << "scope,params,flops\n";
  for (const auto& l : report.layers) os << l.scope << "," << l.params << "," << l.flops * flop_scale << "\n";
  for (const auto& s : report.per_stage) os << s.scope << "," << s.params << "," << s.flops * flop_scale << "\n";
  os << "total," << report.total_params << "," << report.total_flops * flop_scale << "\n";
  return os.str();
}

}  // namespace p2t
