#include "p2t/pmhsa.hpp"

#include <cmath>

namespace p2t {

void PMHSAConfig::validate() const {
  if (channels == 0) throw ConfigError("pmhsa: channels must be positive");
  if (heads == 0 || channels % heads != 0)
    throw ConfigError("pmhsa: channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  if (pool_ratios.empty()) throw ConfigError("pmhsa: pool_ratios must be nonempty");
  for (std::size_t i = 0; i < pool_ratios.size(); ++i) {
    if (pool_ratios[i] == 0) throw ConfigError("pmhsa: pool_ratios must be positive");
    if (i > 0 && pool_ratios[i] <= pool_ratios[i - 1])
      throw ConfigError("pmhsa: pool_ratios must be strictly increasing");
  }
}

std::size_t pooled_extent(std::size_t extent, std::size_t ratio) {
  if (ratio == 0) throw ConfigError("pooling ratio must be positive");
  return (2 * extent + ratio) / (2 * ratio);
}

std::vector<GridSize> pooled_sizes(const PMHSAConfig& cfg, GridSize input) {
  std::vector<GridSize> sizes;
  sizes.reserve(cfg.pool_ratios.size());
  for (auto r : cfg.pool_ratios) {
    GridSize s;
    if (cfg.pooling == PoolingMode::fixed_sizes) {
      s = {std::min(r, input.h), std::min(r, input.w)};
    } else {
      s = {pooled_extent(input.h, r), pooled_extent(input.w, r)};
    }
    if (s.h == 0 || s.w == 0)
      throw ConfigError("pooling ratio " + std::to_string(r) + " leaves no tokens on a " + std::to_string(input.h) +
                        "x" + std::to_string(input.w) + " grid");
    sizes.push_back(s);
  }
  return sizes;
}

std::size_t pooled_tokens(const PMHSAConfig& cfg, GridSize input) {
  std::size_t m = 0;
  for (const auto& s : pooled_sizes(cfg, input)) m += s.tokens();
  return m;
}

template <typename T>
PMHSAState<T> make_pmhsa_state(const std::string& prefix, const PMHSAConfig& cfg, Initializer& init) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  PMHSAState<T> s{make_linear<T>(prefix + ".q", c, c, init),
                  make_linear<T>(prefix + ".k", c, c, init),
                  make_linear<T>(prefix + ".v", c, c, init),
                  make_linear<T>(prefix + ".proj", c, c, init),
                  std::nullopt,
                  make_layer_norm<T>(prefix + ".pool_norm", c)};
  if (cfg.rpe_enabled) s.rpe = make_depthwise<T>(prefix + ".rpe", c, 3, init);
  return s;
}

template <typename T>
std::vector<Var<T>> pyramid_pool(Var<T> image, const PMHSAConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 4) throw DimensionError("pyramid_pool: expected [B,C,H,W], got " + to_string(s));
  std::vector<Var<T>> out;
  for (const auto& size : pooled_sizes(cfg, {s[2], s[3]})) {
    out.push_back(cfg.pool_kind == PoolKind::max ? adaptive_max_pool2d(image, size.h, size.w)
                                                 : adaptive_avg_pool2d(image, size.h, size.w));
  }
  return out;
}

template <typename T>
std::vector<Var<T>> apply_rpe(std::span<const Var<T>> pooled, Conv<T>& rpe) {
  std::vector<Var<T>> out;
  out.reserve(pooled.size());
  for (const auto& p : pooled) out.push_back(add(p, apply(rpe, p)));
  return out;
}

template <typename T>
Var<T> build_pooled_sequence(std::span<const Var<T>> levels, LayerNorm<T>& norm) {
  std::vector<Var<T>> tokens;
  tokens.reserve(levels.size());
  for (const auto& l : levels) tokens.push_back(image_to_seq(l));
  return apply(norm, concat<T>(tokens, 1));
}

namespace {
// [B, L, C] -> [B, heads, L, C / heads], channels split contiguously.
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  const Shape s = x.shape();
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

template <typename T>
Var<T> merge_heads(Var<T> x) {
  const Shape s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}
}  // namespace

template <typename T>
Var<T> pmhsa_forward(Var<T> x, GridSize hw, PMHSAState<T>& state, const PMHSAConfig& cfg, Var<T>* attention) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != cfg.channels)
    throw DimensionError("pmhsa_forward: expected [B, N, " + std::to_string(cfg.channels) + "], got " + to_string(s));
  if (s[1] != hw.tokens())
    throw DimensionError("pmhsa_forward: sequence length " + std::to_string(s[1]) + " != " + std::to_string(hw.h) +
                         "x" + std::to_string(hw.w));
  if (cfg.rpe_enabled != state.rpe.has_value())
    throw ConfigError("pmhsa_forward: rpe toggle does not match the state's parameters");

  auto pooled = pyramid_pool(seq_to_image(x, hw.h, hw.w), cfg);
  if (state.rpe) pooled = apply_rpe<T>(pooled, *state.rpe);
  Var<T> p = build_pooled_sequence<T>(pooled, state.norm);

  Var<T> q = split_heads(apply(state.q, x), cfg.heads);
  Var<T> k = split_heads(apply(state.k, p), cfg.heads);
  Var<T> v = split_heads(apply(state.v, p), cfg.heads);

  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(cfg.head_dim()));
  Var<T> scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt_dk);
  Var<T> attn = softmax_rows(scores);
  if (attention) *attention = attn;
  return apply(state.o, merge_heads(matmul(attn, v)));
}

template <typename T>
Var<T> pmhsa_forward(Var<T> x, GridSize hw, PMHSAState<T>& state, const PMHSAConfig& cfg) {
  return pmhsa_forward<T>(x, hw, state, cfg, nullptr);
}

#define P2T_INSTANTIATE_PMHSA(T)                                                                         \
  template PMHSAState<T> make_pmhsa_state<T>(const std::string&, const PMHSAConfig&, Initializer&);      \
  template std::vector<Var<T>> pyramid_pool(Var<T>, const PMHSAConfig&);                                 \
  template std::vector<Var<T>> apply_rpe(std::span<const Var<T>>, Conv<T>&);                             \
  template Var<T> build_pooled_sequence(std::span<const Var<T>>, LayerNorm<T>&);                         \
  template Var<T> pmhsa_forward(Var<T>, GridSize, PMHSAState<T>&, const PMHSAConfig&);                   \
  template Var<T> pmhsa_forward(Var<T>, GridSize, PMHSAState<T>&, const PMHSAConfig&, Var<T>*);

P2T_INSTANTIATE_PMHSA(float)
P2T_INSTANTIATE_PMHSA(double)

#undef P2T_INSTANTIATE_PMHSA

}  // namespace p2t
