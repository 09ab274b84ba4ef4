#include "p2t/blocks.hpp"

namespace p2t {

template <typename T>
IRBState<T> make_irb_state(const std::string& prefix, std::size_t channels, std::size_t expansion, FfnKind kind,
                           Initializer& init) {
  if (channels == 0 || expansion == 0) throw ConfigError(prefix + ": channels and expansion must be positive");
  const std::size_t hidden = channels * expansion;
  IRBState<T> s{make_conv<T>(prefix + ".expand", channels, hidden, 1, 1, 0, init), std::nullopt, {}, expansion};
  if (kind == FfnKind::irb) s.dw = make_depthwise<T>(prefix + ".dw", hidden, 3, init);
  s.project = make_conv<T>(prefix + ".project", hidden, channels, 1, 1, 0, init);
  return s;
}

template <typename T>
BlockState<T> make_block_state(const std::string& prefix, const BlockConfig& cfg, Initializer& init) {
  auto attn = make_pmhsa_state<T>(prefix + ".attn", cfg.attn, init);
  auto ln1 = make_layer_norm<T>(prefix + ".norm1", cfg.attn.channels);
  auto ffn = make_irb_state<T>(prefix + ".ffn", cfg.attn.channels, cfg.expansion, cfg.ffn, init);
  auto ln2 = make_layer_norm<T>(prefix + ".norm2", cfg.attn.channels);
  return {std::move(attn), std::move(ffn), std::move(ln1), std::move(ln2)};
}

template <typename T>
PatchEmbedState<T> make_patch_embed(const std::string& prefix, std::size_t c_in, std::size_t c_out,
                                    std::size_t kernel, std::size_t stride, Initializer& init) {
  return {make_conv<T>(prefix + ".proj", c_in, c_out, kernel, stride, kernel / 2, init),
          make_layer_norm<T>(prefix + ".norm", c_out)};
}

std::size_t patch_embed_extent(std::size_t extent, std::size_t kernel, std::size_t stride) {
  const std::size_t padded = extent + 2 * (kernel / 2);
  if (padded < kernel || stride == 0)
    throw DimensionError("patch embedding: extent " + std::to_string(extent) + " too small for a " +
                         std::to_string(kernel) + "x" + std::to_string(kernel) + " kernel");
  return (padded - kernel) / stride + 1;
}

template <typename T>
Var<T> irb_forward(Var<T> x, GridSize hw, IRBState<T>& state, Activation act) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != hw.tokens())
    throw DimensionError("irb_forward: sequence " + to_string(s) + " does not match grid " + std::to_string(hw.h) +
                         "x" + std::to_string(hw.w));
  Var<T> h = activate(apply(state.expand, seq_to_image(x, hw.h, hw.w)), act);
  if (state.dw) h = activate(apply(*state.dw, h), act);
  return image_to_seq(apply(state.project, h));
}

template <typename T>
Var<T> block_forward(Var<T> x, GridSize hw, BlockState<T>& state, const BlockConfig& cfg) {
  Var<T> x_att = apply(state.ln1, add(x, pmhsa_forward(x, hw, state.attn, cfg.attn)));
  return apply(state.ln2, add(x_att, irb_forward(x_att, hw, state.ffn, cfg.activation)));
}

template <typename T>
std::pair<Var<T>, GridSize> patch_embed(Var<T> image, PatchEmbedState<T>& state) {
  const Shape& s = image.shape();
  const Shape& ws = state.conv.weight.value.shape();
  if (s.size() != 4) throw DimensionError("patch_embed: expected [B,C,H,W], got " + to_string(s));
  const GridSize out{patch_embed_extent(s[2], ws[2], state.conv.stride),
                     patch_embed_extent(s[3], ws[3], state.conv.stride)};
  Var<T> tokens = image_to_seq(apply(state.conv, image));
  return {apply(state.norm, tokens), out};
}

#define P2T_INSTANTIATE_BLOCKS(T)                                                                              \
  template IRBState<T> make_irb_state<T>(const std::string&, std::size_t, std::size_t, FfnKind, Initializer&); \
  template BlockState<T> make_block_state<T>(const std::string&, const BlockConfig&, Initializer&);            \
  template PatchEmbedState<T> make_patch_embed<T>(const std::string&, std::size_t, std::size_t, std::size_t,   \
                                                  std::size_t, Initializer&);                                  \
  template Var<T> irb_forward(Var<T>, GridSize, IRBState<T>&, Activation);                                     \
  template Var<T> block_forward(Var<T>, GridSize, BlockState<T>&, const BlockConfig&);                         \
  template std::pair<Var<T>, GridSize> patch_embed(Var<T>, PatchEmbedState<T>&);

P2T_INSTANTIATE_BLOCKS(float)
P2T_INSTANTIATE_BLOCKS(double)

#undef P2T_INSTANTIATE_BLOCKS

}  // namespace p2t
