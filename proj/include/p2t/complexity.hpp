#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "p2t/backbone.hpp"

namespace p2t {

// One multiply-accumulate counts as one FLOP.
struct LayerCost {
  std::string scope;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct ComplexityReport {
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  GridSize input;
  std::vector<LayerCost> per_stage;  // stage1..stage4 (each with its patch embedding), head
  std::vector<LayerCost> layers;
};

// Closed-form parameter tally; flops fields are zero.
ComplexityReport count_params(const ModelConfig& cfg);
// Parameters and FLOPs for a batch-1 forward pass at `input`.
ComplexityReport count_flops(const ModelConfig& cfg, GridSize input);

// Attention core: (N + 2M) C^2 + 2 N M C.
std::uint64_t attention_core_flops(std::uint64_t n, std::uint64_t m, std::uint64_t c);

struct SqueezeReport {
  std::vector<std::size_t> pool_ratios;
  double analytic_ratio = 0;  // 1 / sum(p_i^-2)
  std::optional<GridSize> hw;
  std::optional<std::size_t> realized_m;
  std::optional<double> realized_ratio;  // N / M
};

SqueezeReport squeeze_ratio(std::span<const std::size_t> pool_ratios, std::optional<GridSize> hw = std::nullopt);

struct AttentionVariant {
  enum class Kind { vanilla, single_pool, pyramid };
  Kind kind = Kind::vanilla;
  std::vector<std::size_t> ratios;
  std::string label() const;
  bool operator==(const AttentionVariant&) const = default;
};

// "vanilla", "pool:<p>", "pyramid:<p1>,<p2>,..."
AttentionVariant parse_attention_variant(std::string_view spec);

struct AttentionCostRow {
  std::string label;
  std::uint64_t m = 0;
  std::uint64_t core_flops = 0;
};

// N is treated as a square grid when it is a perfect square; otherwise each
// level holds round(N / p^2) tokens. Every pooled level keeps at least one token.
std::vector<AttentionCostRow> compare_attention(std::uint64_t n, std::uint64_t c,
                                                std::span<const AttentionVariant> variants);

// Per-stage architecture table (input size, operator, C, E, depth).
std::string format_architecture(const ModelConfig& cfg, GridSize input);
// Aligned text; `flop_scale` 2 reports 2 x MAC.
std::string format_report_table(const ComplexityReport& report, bool per_layer, std::uint64_t flop_scale = 1);
// CSV with header "scope,params,flops"; per-layer rows, per-stage rows, then "total".
std::string format_report_csv(const ComplexityReport& report, std::uint64_t flop_scale = 1);

}  // namespace p2t
