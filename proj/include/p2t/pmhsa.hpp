#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p2t/layers.hpp"

namespace p2t {

enum class PoolKind { average, max };

// How `PMHSAConfig::pool_ratios` is interpreted: as downsampling ratios
// (pooled extent = round(extent / ratio)) or as fixed pooled extents.
enum class PoolingMode { ratios, fixed_sizes };

struct GridSize {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t tokens() const { return h * w; }
  bool operator==(const GridSize&) const = default;
};

struct PMHSAConfig {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::vector<std::size_t> pool_ratios;
  bool rpe_enabled = true;
  PoolKind pool_kind = PoolKind::average;
  PoolingMode pooling = PoolingMode::ratios;

  std::size_t head_dim() const { return channels / heads; }
  // Throws ConfigError: channels divisible by heads, ratios nonempty,
  // positive, strictly increasing.
  void validate() const;
};

// round_half_away_from_zero(extent / ratio), in exact integer arithmetic.
std::size_t pooled_extent(std::size_t extent, std::size_t ratio);

// Pooled grid per pyramid level, in ratio order. Throws ConfigError when a
// level would be empty. In fixed_sizes mode each size is capped at the input
// extent.
std::vector<GridSize> pooled_sizes(const PMHSAConfig& cfg, GridSize input);

// M: total pooled tokens across levels.
std::size_t pooled_tokens(const PMHSAConfig& cfg, GridSize input);

template <typename T>
struct PMHSAState {
  Linear<T> q, k, v, o;
  std::optional<Conv<T>> rpe;  // one 3x3 depthwise kernel shared by all levels
  LayerNorm<T> norm;           // over the concatenated pooled sequence

  template <typename F>
  void for_each_parameter(F&& f) {
    q.for_each_parameter(f);
    k.for_each_parameter(f);
    v.for_each_parameter(f);
    o.for_each_parameter(f);
    if (rpe) rpe->for_each_parameter(f);
    norm.for_each_parameter(f);
  }
};

template <typename T>
PMHSAState<T> make_pmhsa_state(const std::string& prefix, const PMHSAConfig& cfg, Initializer& init);

// image [B, C, H, W] -> one pooled map per level.
template <typename T>
std::vector<Var<T>> pyramid_pool(Var<T> image, const PMHSAConfig& cfg);

// P_i + DWConv(P_i), same kernel for every level.
template <typename T>
std::vector<Var<T>> apply_rpe(std::span<const Var<T>> pooled, Conv<T>& rpe);

// Flatten each level row-major, concatenate along tokens in level order, and
// layer-normalize over channels: [B, M, C].
template <typename T>
Var<T> build_pooled_sequence(std::span<const Var<T>> levels, LayerNorm<T>& norm);

// x [B, N, C] with N = hw.h * hw.w. Queries come from x, keys and values
// from the pooled sequence; output [B, N, C].
template <typename T>
Var<T> pmhsa_forward(Var<T> x, GridSize hw, PMHSAState<T>& state, const PMHSAConfig& cfg);

// As above; also stores the attention probabilities [B, heads, N, M].
template <typename T>
Var<T> pmhsa_forward(Var<T> x, GridSize hw, PMHSAState<T>& state, const PMHSAConfig& cfg, Var<T>* attention);

}  // namespace p2t
