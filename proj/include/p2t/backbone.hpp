#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "p2t/blocks.hpp"

namespace p2t {

struct StageConfig {
  std::size_t channels = 0;
  std::size_t depth = 0;
  std::size_t heads = 0;
  std::size_t expansion = 0;
  std::vector<std::size_t> pool_ratios;

  bool operator==(const StageConfig&) const = default;
};

struct ModelConfig {
  std::string name = "custom";
  std::size_t in_channels = 3;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 4;
  std::size_t embed_kernel = 3;
  std::size_t embed_stride = 2;
  std::vector<StageConfig> stages;
  std::size_t num_classes = 1000;
  std::size_t head_width = 64;
  // Nominal input extent; pooling geometry is validated against it.
  std::size_t image_size = 224;

  // Ablation toggles.
  bool rpe = true;
  PoolKind pool_kind = PoolKind::average;
  PoolingMode pooling = PoolingMode::ratios;
  std::vector<std::size_t> fixed_pool_sizes{1, 2, 3, 6};
  FfnKind ffn = FfnKind::irb;
  Activation activation = Activation::hardswish;

  // Throws ConfigError naming the violated field.
  void validate() const;
  BlockConfig block_config(std::size_t stage) const;
  // Total downsampling from input to the last stage.
  std::size_t total_stride() const;
  // Token grid of every stage for an input of the given extent.
  std::vector<GridSize> stage_grids(GridSize input) const;

  bool operator==(const ModelConfig&) const = default;
};

// tiny, small, base, large, micro, nano
const std::vector<std::string>& preset_names();
// Throws ConfigError listing the valid names.
ModelConfig preset(std::string_view name);

// Published parameter and FLOP totals for the four full-size presets.
struct PresetReference {
  double params = 0;
  double flops = 0;
};
bool preset_reference(std::string_view name, PresetReference& out);

std::string to_json(const ModelConfig& cfg);
// Strict: unknown keys are rejected. A "preset" key seeds the defaults.
ModelConfig model_config_from_json(std::string_view json);

template <typename T>
struct Stage {
  PatchEmbedState<T> embed;
  std::vector<BlockState<T>> blocks;
};

template <typename T>
struct ModelState {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Stage<T>> stages;
  LayerNorm<T> head_norm;
  Linear<T> head;

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& s : stages) {
      s.embed.for_each_parameter(f);
      for (auto& b : s.blocks) b.for_each_parameter(f);
    }
    head_norm.for_each_parameter(f);
    head.for_each_parameter(f);
  }

  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count();
  void zero_grad();
};

template <typename T>
ModelState<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 4> maps;  // [B, C_i, H_i, W_i]
  std::array<GridSize, 4> grids;
};

// x [B, C_in, H, W]; H and W must be positive multiples of total_stride().
template <typename T>
FeaturePyramid<T> forward_features(ModelState<T>& model, Var<T> x);
// Global average pooling over the last stage, then the linear head.
template <typename T>
Var<T> forward_classify(ModelState<T>& model, Var<T> x);

// Graph-free conveniences.
template <typename T>
Tensor<T> classify(ModelState<T>& model, const Tensor<T>& x);

}  // namespace p2t
