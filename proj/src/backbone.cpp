#include "p2t/backbone.hpp"

#include <map>
#include <set>

#include "json_fields.hpp"

namespace p2t {

using nlohmann::json;
using namespace json_fields;

namespace {

ModelConfig make_preset(std::string name, std::vector<std::size_t> channels, std::vector<std::size_t> depths,
                        std::vector<std::size_t> expansions, std::size_t head_width,
                        std::vector<std::vector<std::size_t>> ratios, std::size_t num_classes,
                        std::size_t image_size) {
  ModelConfig cfg;
  cfg.name = std::move(name);
  cfg.head_width = head_width;
  cfg.num_classes = num_classes;
  cfg.image_size = image_size;
  for (std::size_t i = 0; i < 4; ++i)
    cfg.stages.push_back({channels[i], depths[i], channels[i] / head_width, expansions[i], ratios[i]});
  return cfg;
}

const std::vector<std::vector<std::size_t>> kFullRatios{{12, 16, 20, 24}, {6, 8, 10, 12}, {3, 4, 5, 6}, {1, 2, 3, 4}};
// Sized so every level stays nonempty from 32x32 inputs upward.
const std::vector<std::vector<std::size_t>> kSmallRatios{{2, 4, 6, 8}, {2, 4}, {1, 2}, {1, 2}};

const std::map<std::string, ModelConfig, std::less<>>& presets() {
  static const std::map<std::string, ModelConfig, std::less<>> table{
      {"tiny", make_preset("tiny", {48, 96, 240, 384}, {2, 2, 6, 3}, {8, 8, 4, 4}, 48, kFullRatios, 1000, 224)},
      {"small", make_preset("small", {64, 128, 320, 512}, {2, 2, 9, 3}, {8, 8, 4, 4}, 64, kFullRatios, 1000, 224)},
      {"base", make_preset("base", {64, 128, 320, 512}, {3, 4, 18, 3}, {8, 8, 4, 4}, 64, kFullRatios, 1000, 224)},
      {"large", make_preset("large", {64, 128, 320, 640}, {3, 8, 27, 3}, {8, 8, 4, 4}, 64, kFullRatios, 1000, 224)},
      {"micro", make_preset("micro", {8, 16, 24, 32}, {1, 1, 1, 1}, {4, 4, 4, 4}, 8, kSmallRatios, 4, 32)},
      {"nano", make_preset("nano", {4, 8, 8, 16}, {1, 1, 1, 1}, {2, 2, 2, 2}, 4, kSmallRatios, 2, 32)},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"tiny", "small", "base", "large", "micro", "nano"};
  return names;
}

ModelConfig preset(std::string_view name) {
  const auto& table = presets();
  if (auto it = table.find(name); it != table.end()) return it->second;
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + std::string(name) + "'; valid presets: " + valid);
}

bool preset_reference(std::string_view name, PresetReference& out) {
  static const std::map<std::string, PresetReference, std::less<>> refs{
      {"tiny", {11.6e6, 1.8e9}}, {"small", {24.1e6, 3.7e9}}, {"base", {36.1e6, 6.5e9}}, {"large", {54.5e6, 9.8e9}}};
  auto it = refs.find(name);
  if (it == refs.end()) return false;
  out = it->second;
  return true;
}

std::size_t ModelConfig::total_stride() const {
  std::size_t s = stem_stride;
  for (std::size_t i = 1; i < stages.size(); ++i) s *= embed_stride;
  return s;
}

BlockConfig ModelConfig::block_config(std::size_t stage) const {
  const auto& s = stages.at(stage);
  BlockConfig b;
  b.attn.channels = s.channels;
  b.attn.heads = s.heads;
  b.attn.pool_ratios = pooling == PoolingMode::fixed_sizes ? fixed_pool_sizes : s.pool_ratios;
  b.attn.rpe_enabled = rpe;
  b.attn.pool_kind = pool_kind;
  b.attn.pooling = pooling;
  b.expansion = s.expansion;
  b.ffn = ffn;
  b.activation = activation;
  return b;
}

std::vector<GridSize> ModelConfig::stage_grids(GridSize input) const {
  std::vector<GridSize> grids;
  GridSize g{patch_embed_extent(input.h, stem_kernel, stem_stride), patch_embed_extent(input.w, stem_kernel, stem_stride)};
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i > 0) g = {patch_embed_extent(g.h, embed_kernel, embed_stride), patch_embed_extent(g.w, embed_kernel, embed_stride)};
    grids.push_back(g);
  }
  return grids;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (stages.size() != 4) fail("stages", "expected 4 stages, got " + std::to_string(stages.size()));
  if (in_channels == 0) fail("in_channels", "must be positive");
  if (num_classes == 0) fail("num_classes", "must be positive");
  if (head_width == 0) fail("head_width", "must be positive");
  if (stem_kernel == 0 || stem_stride == 0) fail("stem", "kernel and stride must be positive");
  if (embed_kernel == 0 || embed_stride == 0) fail("embed", "kernel and stride must be positive");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string field = "stages[" + std::to_string(i) + "]";
    if (s.channels == 0) fail(field + ".channels", "must be positive");
    if (s.depth == 0) fail(field + ".depth", "must be positive");
    if (s.expansion == 0) fail(field + ".expansion", "must be positive");
    if (s.heads * head_width != s.channels)
      fail(field + ".heads", "expected channels / head_width = " + std::to_string(s.channels) + " / " +
                                 std::to_string(head_width) + ", got " + std::to_string(s.heads));
    try {
      block_config(i).attn.validate();
    } catch (const ConfigError& e) {
      fail(field + ".pool_ratios", e.what());
    }
  }
  if (image_size == 0 || image_size % total_stride() != 0)
    fail("image_size", "must be a positive multiple of " + std::to_string(total_stride()));
  const auto grids = stage_grids({image_size, image_size});
  for (std::size_t i = 0; i < stages.size(); ++i) {
    try {
      pooled_sizes(block_config(i).attn, grids[i]);
    } catch (const ConfigError& e) {
      fail("stages[" + std::to_string(i) + "].pool_ratios", e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename E>
struct EnumNames;
template <>
struct EnumNames<PoolKind> {
  static constexpr std::array<std::pair<PoolKind, std::string_view>, 2> values{
      {{PoolKind::average, "average"}, {PoolKind::max, "max"}}};
};
template <>
struct EnumNames<PoolingMode> {
  static constexpr std::array<std::pair<PoolingMode, std::string_view>, 2> values{
      {{PoolingMode::ratios, "ratios"}, {PoolingMode::fixed_sizes, "fixed_sizes"}}};
};
template <>
struct EnumNames<FfnKind> {
  static constexpr std::array<std::pair<FfnKind, std::string_view>, 2> values{
      {{FfnKind::irb, "irb"}, {FfnKind::mlp, "mlp"}}};
};
template <>
struct EnumNames<Activation> {
  static constexpr std::array<std::pair<Activation, std::string_view>, 2> values{
      {{Activation::hardswish, "hardswish"}, {Activation::gelu, "gelu"}}};
};

template <typename E>
std::string enum_name(E v) {
  for (const auto& [e, n] : EnumNames<E>::values)
    if (e == v) return std::string(n);
  return "?";
}

template <typename E>
E enum_value(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a string");
  const auto s = j.get<std::string>();
  std::string valid;
  for (const auto& [e, n] : EnumNames<E>::values) {
    if (n == s) return e;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError(key + ": unknown value '" + s + "' (expected one of " + valid + ")");
}

}  // namespace

std::string to_json(const ModelConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages)
    stages.push_back({{"channels", s.channels},
                      {"depth", s.depth},
                      {"heads", s.heads},
                      {"expansion", s.expansion},
                      {"pool_ratios", s.pool_ratios}});
  json j{{"name", cfg.name},
         {"in_channels", cfg.in_channels},
         {"stem_kernel", cfg.stem_kernel},
         {"stem_stride", cfg.stem_stride},
         {"embed_kernel", cfg.embed_kernel},
         {"embed_stride", cfg.embed_stride},
         {"stages", stages},
         {"num_classes", cfg.num_classes},
         {"head_width", cfg.head_width},
         {"image_size", cfg.image_size},
         {"rpe", cfg.rpe},
         {"pool_kind", enum_name(cfg.pool_kind)},
         {"pooling", enum_name(cfg.pooling)},
         {"fixed_pool_sizes", cfg.fixed_pool_sizes},
         {"ffn", enum_name(cfg.ffn)},
         {"activation", enum_name(cfg.activation)}};
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config: malformed JSON: ") + e.what());
  }
  static const std::set<std::string> keys{"preset",      "name",       "in_channels", "stem_kernel", "stem_stride",
                                          "embed_kernel", "embed_stride", "stages",   "num_classes", "head_width",
                                          "image_size",  "rpe",        "pool_kind",   "pooling",     "fixed_pool_sizes",
                                          "ffn",         "activation"};
  reject_unknown(j, keys, "model");
  ModelConfig cfg;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("model.preset: expected a string");
    cfg = preset(j["preset"].get<std::string>());
  }
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError("model.name: expected a string");
    cfg.name = j["name"].get<std::string>();
  }
  auto size_field = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = get_size(j[key], std::string("model.") + key);
  };
  size_field("in_channels", cfg.in_channels);
  size_field("stem_kernel", cfg.stem_kernel);
  size_field("stem_stride", cfg.stem_stride);
  size_field("embed_kernel", cfg.embed_kernel);
  size_field("embed_stride", cfg.embed_stride);
  size_field("num_classes", cfg.num_classes);
  size_field("head_width", cfg.head_width);
  size_field("image_size", cfg.image_size);
  if (j.contains("stages")) {
    const auto& st = j["stages"];
    if (!st.is_array()) throw ConfigError("model.stages: expected an array");
    cfg.stages.clear();
    static const std::set<std::string> stage_keys{"channels", "depth", "heads", "expansion", "pool_ratios"};
    for (std::size_t i = 0; i < st.size(); ++i) {
      const std::string where = "model.stages[" + std::to_string(i) + "]";
      reject_unknown(st[i], stage_keys, where);
      for (const auto& k : stage_keys)
        if (!st[i].contains(k)) throw ConfigError(where + ": missing key '" + k + "'");
      cfg.stages.push_back({get_size(st[i]["channels"], where + ".channels"), get_size(st[i]["depth"], where + ".depth"),
                            get_size(st[i]["heads"], where + ".heads"),
                            get_size(st[i]["expansion"], where + ".expansion"),
                            get_sizes(st[i]["pool_ratios"], where + ".pool_ratios")});
    }
  }
  if (j.contains("rpe")) cfg.rpe = get_bool(j["rpe"], "model.rpe");
  if (j.contains("pool_kind")) cfg.pool_kind = enum_value<PoolKind>(j["pool_kind"], "model.pool_kind");
  if (j.contains("pooling")) cfg.pooling = enum_value<PoolingMode>(j["pooling"], "model.pooling");
  if (j.contains("fixed_pool_sizes")) cfg.fixed_pool_sizes = get_sizes(j["fixed_pool_sizes"], "model.fixed_pool_sizes");
  if (j.contains("ffn")) cfg.ffn = enum_value<FfnKind>(j["ffn"], "model.ffn");
  if (j.contains("activation")) cfg.activation = enum_value<Activation>(j["activation"], "model.activation");
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
std::vector<Parameter<T>*> ModelState<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for_each_parameter([&](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::size_t ModelState<T>::parameter_count() {
  std::size_t n = 0;
  for_each_parameter([&](Parameter<T>& p) { n += p.value.numel(); });
  return n;
}

template <typename T>
void ModelState<T>::zero_grad() {
  for_each_parameter([](Parameter<T>& p) { p.zero_grad(); });
}

template <typename T>
ModelState<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer init(seed);
  ModelState<T> m;
  m.config = cfg;
  m.seed = seed;
  std::size_t c_prev = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& sc = cfg.stages[i];
    const std::string prefix = "stages." + std::to_string(i);
    Stage<T> stage;
    stage.embed = i == 0 ? make_patch_embed<T>(prefix + ".embed", c_prev, sc.channels, cfg.stem_kernel, cfg.stem_stride, init)
                         : make_patch_embed<T>(prefix + ".embed", c_prev, sc.channels, cfg.embed_kernel,
                                               cfg.embed_stride, init);
    const auto bc = cfg.block_config(i);
    for (std::size_t b = 0; b < sc.depth; ++b)
      stage.blocks.push_back(make_block_state<T>(prefix + ".blocks." + std::to_string(b), bc, init));
    m.stages.push_back(std::move(stage));
    c_prev = sc.channels;
  }
  m.head_norm = make_layer_norm<T>("head_norm", c_prev);
  m.head = make_linear<T>("head", c_prev, cfg.num_classes, init);
  return m;
}

namespace {
template <typename T>
std::pair<Var<T>, GridSize> run_stages(ModelState<T>& model, Var<T> x, FeaturePyramid<T>* pyramid) {
  const auto& cfg = model.config;
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels)
    throw DimensionError("model input must be [B, " + std::to_string(cfg.in_channels) + ", H, W], got " + to_string(s));
  const std::size_t mult = cfg.total_stride();
  if (s[2] < mult || s[3] < mult || s[2] % mult != 0 || s[3] % mult != 0)
    throw DimensionError("input extent " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " must be a positive multiple of " + std::to_string(mult));
  Var<T> image = x;
  Var<T> tokens{};
  GridSize grid{};
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    auto& stage = model.stages[i];
    std::tie(tokens, grid) = patch_embed(image, stage.embed);
    const auto bc = cfg.block_config(i);
    for (auto& block : stage.blocks) tokens = block_forward(tokens, grid, block, bc);
    if (pyramid || i + 1 < model.stages.size()) image = seq_to_image(tokens, grid.h, grid.w);
    if (pyramid) {
      pyramid->maps[i] = image;
      pyramid->grids[i] = grid;
    }
  }
  return {tokens, grid};
}
}  // namespace

template <typename T>
FeaturePyramid<T> forward_features(ModelState<T>& model, Var<T> x) {
  FeaturePyramid<T> out;
  run_stages(model, x, &out);
  return out;
}

template <typename T>
Var<T> forward_classify(ModelState<T>& model, Var<T> x) {
  auto [tokens, grid] = run_stages<T>(model, x, nullptr);
  Var<T> pooled = mean_axis(apply(model.head_norm, tokens), 1);
  return apply(model.head, pooled);
}

template <typename T>
Tensor<T> classify(ModelState<T>& model, const Tensor<T>& x) {
  Graph<T> g;
  return forward_classify(model, g.input(x)).value();
}

#define P2T_INSTANTIATE_BACKBONE(T)                                            \
  template struct ModelState<T>;                                               \
  template ModelState<T> build_model<T>(const ModelConfig&, std::uint64_t);    \
  template FeaturePyramid<T> forward_features(ModelState<T>&, Var<T>);         \
  template Var<T> forward_classify(ModelState<T>&, Var<T>);                    \
  template Tensor<T> classify(ModelState<T>&, const Tensor<T>&);

P2T_INSTANTIATE_BACKBONE(float)
P2T_INSTANTIATE_BACKBONE(double)

#undef P2T_INSTANTIATE_BACKBONE

}  // namespace p2t
