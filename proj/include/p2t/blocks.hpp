#pragma once

#include <optional>
#include <string>
#include <utility>

#include "p2t/pmhsa.hpp"

namespace p2t {

// irb: 1x1 expand, act, 3x3 depthwise, act, 1x1 project.
// mlp: the same without the depthwise conv (expand, act, project).
enum class FfnKind { irb, mlp };

struct BlockConfig {
  PMHSAConfig attn;
  std::size_t expansion = 4;
  FfnKind ffn = FfnKind::irb;
  Activation activation = Activation::hardswish;
};

template <typename T>
struct IRBState {
  Conv<T> expand;             // [E*C, C, 1, 1]
  std::optional<Conv<T>> dw;  // [E*C, 1, 3, 3]; absent for the mlp arm
  Conv<T> project;            // [C, E*C, 1, 1]
  std::size_t expansion = 1;

  template <typename F>
  void for_each_parameter(F&& f) {
    expand.for_each_parameter(f);
    if (dw) dw->for_each_parameter(f);
    project.for_each_parameter(f);
  }
};

template <typename T>
struct BlockState {
  PMHSAState<T> attn;
  IRBState<T> ffn;
  LayerNorm<T> ln1, ln2;

  template <typename F>
  void for_each_parameter(F&& f) {
    attn.for_each_parameter(f);
    ln1.for_each_parameter(f);
    ffn.for_each_parameter(f);
    ln2.for_each_parameter(f);
  }
};

template <typename T>
struct PatchEmbedState {
  Conv<T> conv;  // k x k, stride S, padding k/2
  LayerNorm<T> norm;

  template <typename F>
  void for_each_parameter(F&& f) {
    conv.for_each_parameter(f);
    norm.for_each_parameter(f);
  }
};

template <typename T>
IRBState<T> make_irb_state(const std::string& prefix, std::size_t channels, std::size_t expansion, FfnKind kind,
                           Initializer& init);
template <typename T>
BlockState<T> make_block_state(const std::string& prefix, const BlockConfig& cfg, Initializer& init);
template <typename T>
PatchEmbedState<T> make_patch_embed(const std::string& prefix, std::size_t c_in, std::size_t c_out,
                                    std::size_t kernel, std::size_t stride, Initializer& init);

// Output extent of a k x k, stride S, padding k/2 convolution.
std::size_t patch_embed_extent(std::size_t extent, std::size_t kernel, std::size_t stride);

template <typename T>
Var<T> irb_forward(Var<T> x, GridSize hw, IRBState<T>& state, Activation act = Activation::hardswish);

// Post-norm wiring: x_att = LN1(x + PMHSA(x)); out = LN2(x_att + FFN(x_att)).
template <typename T>
Var<T> block_forward(Var<T> x, GridSize hw, BlockState<T>& state, const BlockConfig& cfg);

// image [B, C_in, H, W] -> tokens [B, H'*W', C_out] and the new grid.
template <typename T>
std::pair<Var<T>, GridSize> patch_embed(Var<T> image, PatchEmbedState<T>& state);

}  // namespace p2t
