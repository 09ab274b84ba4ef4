#include "p2t/p2t.h"

#include <cstring>
#include <optional>
#include <string>

#include "p2t/checkpoint.hpp"
#include "p2t/complexity.hpp"
#include "p2t/gradcheck_suite.hpp"
#include "p2t/run_config.hpp"

using namespace p2t;

struct p2t_config {
  ModelConfig cfg;
};
struct p2t_report {
  ComplexityReport report;
};
struct p2t_compare {
  std::vector<AttentionCostRow> rows;
};
struct p2t_model {
  mutable ModelState<float> model;
};
struct p2t_run_config {
  RunConfig rc;
};
struct p2t_gradcheck {
  GradcheckReport report;
};

namespace {

thread_local std::string last_error;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void require(bool condition, const char* what) {
  if (!condition) throw InvalidArgument(what);
}

p2t_status fail(p2t_status status, const char* what) {
  last_error = what;
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
p2t_status guarded(F&& body, std::size_t* diverged_step = nullptr) noexcept {
  try {
    body();
    return P2T_OK;
  } catch (const InvalidArgument& e) {
    return fail(P2T_ERR_INVALID_ARGUMENT, e.what());
  } catch (const ConfigError& e) {
    return fail(P2T_ERR_CONFIG, e.what());
  } catch (const DimensionError& e) {
    return fail(P2T_ERR_DIMENSION, e.what());
  } catch (const DivergenceError& e) {
    if (diverged_step) *diverged_step = e.step();
    return fail(P2T_ERR_DIVERGENCE, e.what());
  } catch (const NumericError& e) {
    return fail(P2T_ERR_NUMERIC, e.what());
  } catch (const IoError& e) {
    return fail(P2T_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(P2T_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(P2T_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(P2T_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void fill(const LayerCost& cost, const char** scope, uint64_t* params, uint64_t* flops) {
  if (scope) *scope = cost.scope.c_str();
  if (params) *params = cost.params;
  if (flops) *flops = cost.flops;
}

Tensor<float> input_tensor(const float* input, size_t batch, size_t channels, size_t h, size_t w) {
  require(input != nullptr, "input is null");
  require(batch > 0 && channels > 0 && h > 0 && w > 0, "input extents must be positive");
  const Shape shape{batch, channels, h, w};
  return Tensor<float>(shape, std::vector<float>(input, input + numel(shape)));
}

}  // namespace

extern "C" {

const char* p2t_version(void) { return "1.0.0"; }

const char* p2t_status_string(p2t_status status) {
  switch (status) {
    case P2T_OK:
      return "ok";
    case P2T_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case P2T_ERR_CONFIG:
      return "configuration error";
    case P2T_ERR_DIMENSION:
      return "dimension error";
    case P2T_ERR_NUMERIC:
      return "numeric error";
    case P2T_ERR_DIVERGENCE:
      return "training diverged";
    case P2T_ERR_IO:
      return "i/o error";
    case P2T_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* p2t_last_error(void) { return last_error.c_str(); }

void p2t_string_free(char* s) { delete[] s; }

size_t p2t_preset_count(void) { return preset_names().size(); }

const char* p2t_preset_name(size_t index) {
  const auto& names = preset_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

p2t_status p2t_preset_reference(const char* name, int* has_reference, double* params, double* flops) {
  return guarded([&] {
    require(name && has_reference, "name and has_reference must not be null");
    preset(name);
    PresetReference ref;
    *has_reference = preset_reference(name, ref) ? 1 : 0;
    if (params) *params = ref.params;
    if (flops) *flops = ref.flops;
  });
}

p2t_status p2t_config_from_preset(const char* name, p2t_config** out) {
  return guarded([&] {
    require(name && out, "name and out must not be null");
    *out = new p2t_config{preset(name)};
  });
}

p2t_status p2t_config_from_json(const char* json, p2t_config** out) {
  return guarded([&] {
    require(json && out, "json and out must not be null");
    *out = new p2t_config{model_config_from_json(json)};
  });
}

p2t_status p2t_config_to_json(const p2t_config* cfg, char** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    *out = dup_string(to_json(cfg->cfg));
  });
}

void p2t_config_free(p2t_config* cfg) { delete cfg; }

p2t_status p2t_config_get_info(const p2t_config* cfg, p2t_config_info* out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    out->in_channels = cfg->cfg.in_channels;
    out->num_classes = cfg->cfg.num_classes;
    out->image_size = cfg->cfg.image_size;
    out->total_stride = cfg->cfg.total_stride();
    out->num_stages = cfg->cfg.stages.size();
  });
}

p2t_status p2t_config_stage_grids(const p2t_config* cfg, size_t h, size_t w, size_t* grids, size_t grids_len) {
  return guarded([&] {
    require(cfg && grids, "cfg and grids must not be null");
    const auto g = cfg->cfg.stage_grids({h, w});
    require(grids_len >= 2 * g.size(), "grids buffer too small");
    for (std::size_t i = 0; i < g.size(); ++i) {
      grids[2 * i] = g[i].h;
      grids[2 * i + 1] = g[i].w;
    }
  });
}

p2t_status p2t_config_describe(const p2t_config* cfg, size_t h, size_t w, char** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    *out = dup_string(format_architecture(cfg->cfg, {h, w}));
  });
}

p2t_status p2t_count_params(const p2t_config* cfg, p2t_report** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    *out = new p2t_report{count_params(cfg->cfg)};
  });
}

p2t_status p2t_count_flops(const p2t_config* cfg, size_t h, size_t w, p2t_report** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    *out = new p2t_report{count_flops(cfg->cfg, {h, w})};
  });
}

p2t_status p2t_report_totals(const p2t_report* r, uint64_t* params, uint64_t* flops) {
  return guarded([&] {
    require(r != nullptr, "report is null");
    if (params) *params = r->report.total_params;
    if (flops) *flops = r->report.total_flops;
  });
}

size_t p2t_report_stage_count(const p2t_report* r) { return r ? r->report.per_stage.size() : 0; }

p2t_status p2t_report_stage(const p2t_report* r, size_t index, const char** scope, uint64_t* params,
                            uint64_t* flops) {
  return guarded([&] {
    require(r && index < r->report.per_stage.size(), "stage index out of range");
    fill(r->report.per_stage[index], scope, params, flops);
  });
}

size_t p2t_report_layer_count(const p2t_report* r) { return r ? r->report.layers.size() : 0; }

p2t_status p2t_report_layer(const p2t_report* r, size_t index, const char** scope, uint64_t* params,
                            uint64_t* flops) {
  return guarded([&] {
    require(r && index < r->report.layers.size(), "layer index out of range");
    fill(r->report.layers[index], scope, params, flops);
  });
}

p2t_status p2t_report_format_text(const p2t_report* r, p2t_report_format format, uint64_t flop_scale, char** out) {
  return guarded([&] {
    require(r && out, "report and out must not be null");
    require(flop_scale == 1 || flop_scale == 2, "flop_scale must be 1 or 2");
    switch (format) {
      case P2T_REPORT_TABLE:
        *out = dup_string(format_report_table(r->report, false, flop_scale));
        return;
      case P2T_REPORT_TABLE_LAYERS:
        *out = dup_string(format_report_table(r->report, true, flop_scale));
        return;
      case P2T_REPORT_CSV:
        *out = dup_string(format_report_csv(r->report, flop_scale));
        return;
    }
    throw InvalidArgument("unknown report format");
  });
}

void p2t_report_free(p2t_report* r) { delete r; }

p2t_status p2t_squeeze_ratio(const size_t* ratios, size_t count, size_t h, size_t w, p2t_squeeze_result* out) {
  return guarded([&] {
    require(ratios && out, "ratios and out must not be null");
    require((h == 0) == (w == 0), "h and w must both be zero or both be positive");
    std::optional<GridSize> hw;
    if (h > 0) hw = GridSize{h, w};
    const auto r = squeeze_ratio(std::span<const std::size_t>(ratios, count), hw);
    out->analytic_ratio = r.analytic_ratio;
    out->has_realized = r.realized_m.has_value() ? 1 : 0;
    out->realized_m = r.realized_m.value_or(0);
    out->realized_ratio = r.realized_ratio.value_or(0.0);
  });
}

p2t_status p2t_compare_attention(uint64_t n, uint64_t c, const char* const* specs, size_t count, p2t_compare** out) {
  return guarded([&] {
    require(out && (specs || count == 0), "specs and out must not be null");
    std::vector<AttentionVariant> variants;
    for (std::size_t i = 0; i < count; ++i) {
      require(specs[i] != nullptr, "variant spec is null");
      variants.push_back(parse_attention_variant(specs[i]));
    }
    *out = new p2t_compare{compare_attention(n, c, variants)};
  });
}

size_t p2t_compare_row_count(const p2t_compare* cmp) { return cmp ? cmp->rows.size() : 0; }

p2t_status p2t_compare_row(const p2t_compare* cmp, size_t index, const char** label, uint64_t* m,
                           uint64_t* core_flops) {
  return guarded([&] {
    require(cmp && index < cmp->rows.size(), "row index out of range");
    const auto& row = cmp->rows[index];
    if (label) *label = row.label.c_str();
    if (m) *m = row.m;
    if (core_flops) *core_flops = row.core_flops;
  });
}

void p2t_compare_free(p2t_compare* cmp) { delete cmp; }

p2t_status p2t_model_create(const p2t_config* cfg, uint64_t seed, p2t_model** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be null");
    *out = new p2t_model{build_model<float>(cfg->cfg, seed)};
  });
}

p2t_status p2t_model_load(const char* path, p2t_model** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new p2t_model{load_checkpoint(path)};
  });
}

p2t_status p2t_model_save(const p2t_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model and path must not be null");
    save_checkpoint(path, model->model);
  });
}

p2t_status p2t_model_config(const p2t_model* model, p2t_config** out) {
  return guarded([&] {
    require(model && out, "model and out must not be null");
    *out = new p2t_config{model->model.config};
  });
}

p2t_status p2t_model_parameter_count(const p2t_model* model, uint64_t* out) {
  return guarded([&] {
    require(model && out, "model and out must not be null");
    *out = model->model.parameter_count();
  });
}

p2t_status p2t_model_forward(p2t_model* model, const float* input, size_t batch, size_t channels, size_t h, size_t w,
                             float* logits, size_t logits_len) {
  return guarded([&] {
    require(model && logits, "model and logits must not be null");
    require(logits_len >= batch * model->model.config.num_classes, "logits buffer too small");
    const auto out = classify(model->model, input_tensor(input, batch, channels, h, w));
    std::memcpy(logits, out.data().data(), out.numel() * sizeof(float));
  });
}

p2t_status p2t_model_features(p2t_model* model, const float* input, size_t batch, size_t channels, size_t h,
                              size_t w, size_t stage, float* out, size_t out_len, size_t* shape) {
  return guarded([&] {
    require(model && shape, "model and shape must not be null");
    require(stage < 4, "stage must be 0..3");
    Graph<float> g;
    const auto pyramid = forward_features(model->model, g.input(input_tensor(input, batch, channels, h, w)));
    const auto& value = pyramid.maps[stage].value();
    for (int i = 0; i < 4; ++i) shape[i] = value.size(i);
    if (!out) return;
    require(out_len >= value.numel(), "feature buffer too small");
    std::memcpy(out, value.data().data(), value.numel() * sizeof(float));
  });
}

void p2t_model_free(p2t_model* model) { delete model; }

p2t_status p2t_run_config_load(const char* path, p2t_run_config** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new p2t_run_config{load_run_config(path)};
  });
}

p2t_status p2t_run_config_from_json(const char* json, p2t_run_config** out) {
  return guarded([&] {
    require(json && out, "json and out must not be null");
    *out = new p2t_run_config{run_config_from_json(json)};
  });
}

p2t_status p2t_run_config_to_json(const p2t_run_config* rc, char** out) {
  return guarded([&] {
    require(rc && out, "rc and out must not be null");
    *out = dup_string(to_json(rc->rc));
  });
}

void p2t_run_config_free(p2t_run_config* rc) { delete rc; }

p2t_status p2t_train(const p2t_run_config* rc, p2t_train_callback callback, void* user, p2t_train_record* last,
                     size_t* diverged_step) {
  return guarded(
      [&] {
        require(rc != nullptr, "rc is null");
        auto convert = [](const TrainRecord& r) { return p2t_train_record{r.step, r.loss, r.train_accuracy, r.lr}; };
        const auto result = run_training(rc->rc, [&](const TrainRecord& r) {
          if (!callback) return;
          const auto rec = convert(r);
          callback(&rec, user);
        });
        if (last && !result.records.empty()) *last = convert(result.records.back());
      },
      diverged_step);
}

p2t_status p2t_gradcheck_run(const char* scope, p2t_gradcheck** out) {
  return guarded([&] {
    require(scope && out, "scope and out must not be null");
    *out = new p2t_gradcheck{gradcheck_suite(gradcheck_scope_from_string(scope))};
  });
}

double p2t_gradcheck_tolerance(const p2t_gradcheck* g) { return g ? g->report.tolerance : 0.0; }

int p2t_gradcheck_passed(const p2t_gradcheck* g) { return g && g->report.passed() ? 1 : 0; }

size_t p2t_gradcheck_case_count(const p2t_gradcheck* g) { return g ? g->report.cases.size() : 0; }

p2t_status p2t_gradcheck_case(const p2t_gradcheck* g, size_t index, const char** name, double* max_rel_error,
                              size_t* checked, int* passed) {
  return guarded([&] {
    require(g && index < g->report.cases.size(), "case index out of range");
    const auto& c = g->report.cases[index];
    if (name) *name = c.name.c_str();
    if (max_rel_error) *max_rel_error = c.max_rel_error;
    if (checked) *checked = c.checked;
    if (passed) *passed = c.passed ? 1 : 0;
  });
}

void p2t_gradcheck_free(p2t_gradcheck* g) { delete g; }

}  // extern "C"
