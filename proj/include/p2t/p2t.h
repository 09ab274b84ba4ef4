/* C interface to the p2t library.
 *
 * Every function that can fail returns a p2t_status. On failure the message
 * is available from p2t_last_error() on the same thread until the next call
 * that fails. Objects are opaque handles released with their *_free
 * function; strings returned through char** are released with
 * p2t_string_free. Borrowed const char* results stay valid for the lifetime
 * of the handle they came from.
 */
#ifndef P2T_H
#define P2T_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define P2T_API __declspec(dllexport)
#else
#define P2T_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum p2t_status {
  P2T_OK = 0,
  P2T_ERR_INVALID_ARGUMENT = 1, /* null pointer, bad buffer size, bad index */
  P2T_ERR_CONFIG = 2,           /* invalid or malformed configuration */
  P2T_ERR_DIMENSION = 3,        /* shape mismatch */
  P2T_ERR_NUMERIC = 4,          /* non-finite value */
  P2T_ERR_DIVERGENCE = 5,       /* training loss stopped being finite */
  P2T_ERR_IO = 6,
  P2T_ERR_INTERNAL = 7
} p2t_status;

P2T_API const char* p2t_version(void);
P2T_API const char* p2t_status_string(p2t_status status);
P2T_API const char* p2t_last_error(void);
P2T_API void p2t_string_free(char* s);

/* ---- model configurations ---- */

typedef struct p2t_config p2t_config;

P2T_API size_t p2t_preset_count(void);
/* NULL when index is out of range. */
P2T_API const char* p2t_preset_name(size_t index);
/* *has_reference is 0 for presets without published totals. */
P2T_API p2t_status p2t_preset_reference(const char* name, int* has_reference, double* params, double* flops);

P2T_API p2t_status p2t_config_from_preset(const char* name, p2t_config** out);
P2T_API p2t_status p2t_config_from_json(const char* json, p2t_config** out);
P2T_API p2t_status p2t_config_to_json(const p2t_config* cfg, char** out);
P2T_API void p2t_config_free(p2t_config* cfg);

typedef struct p2t_config_info {
  size_t in_channels;
  size_t num_classes;
  size_t image_size;
  size_t total_stride;
  size_t num_stages;
} p2t_config_info;

P2T_API p2t_status p2t_config_get_info(const p2t_config* cfg, p2t_config_info* out);
/* Token grid per stage for an h x w input: grids[2*i] = H_i, grids[2*i+1] = W_i.
 * `grids` must hold 2 * num_stages entries. */
P2T_API p2t_status p2t_config_stage_grids(const p2t_config* cfg, size_t h, size_t w, size_t* grids, size_t grids_len);
/* Per-stage architecture table for an h x w input. */
P2T_API p2t_status p2t_config_describe(const p2t_config* cfg, size_t h, size_t w, char** out);

/* ---- complexity ---- */

typedef struct p2t_report p2t_report;

P2T_API p2t_status p2t_count_params(const p2t_config* cfg, p2t_report** out);
P2T_API p2t_status p2t_count_flops(const p2t_config* cfg, size_t h, size_t w, p2t_report** out);
P2T_API p2t_status p2t_report_totals(const p2t_report* r, uint64_t* params, uint64_t* flops);
P2T_API size_t p2t_report_stage_count(const p2t_report* r);
P2T_API p2t_status p2t_report_stage(const p2t_report* r, size_t index, const char** scope, uint64_t* params,
                                    uint64_t* flops);
P2T_API size_t p2t_report_layer_count(const p2t_report* r);
P2T_API p2t_status p2t_report_layer(const p2t_report* r, size_t index, const char** scope, uint64_t* params,
                                    uint64_t* flops);

typedef enum p2t_report_format { P2T_REPORT_TABLE = 0, P2T_REPORT_TABLE_LAYERS = 1, P2T_REPORT_CSV = 2 } p2t_report_format;

/* flop_scale 1 reports MACs, 2 reports 2 x MACs. */
P2T_API p2t_status p2t_report_format_text(const p2t_report* r, p2t_report_format format, uint64_t flop_scale,
                                          char** out);
P2T_API void p2t_report_free(p2t_report* r);

typedef struct p2t_squeeze_result {
  double analytic_ratio; /* 1 / sum(p_i^-2) */
  int has_realized;      /* set when h and w are both nonzero */
  size_t realized_m;
  double realized_ratio; /* N / M */
} p2t_squeeze_result;

/* Pass h = w = 0 for the analytic ratio only. */
P2T_API p2t_status p2t_squeeze_ratio(const size_t* ratios, size_t count, size_t h, size_t w,
                                     p2t_squeeze_result* out);

typedef struct p2t_compare p2t_compare;

/* Variant specs: "vanilla", "pool:<p>", "pyramid:<p1>,<p2>,...". */
P2T_API p2t_status p2t_compare_attention(uint64_t n, uint64_t c, const char* const* specs, size_t count,
                                         p2t_compare** out);
P2T_API size_t p2t_compare_row_count(const p2t_compare* cmp);
P2T_API p2t_status p2t_compare_row(const p2t_compare* cmp, size_t index, const char** label, uint64_t* m,
                                   uint64_t* core_flops);
P2T_API void p2t_compare_free(p2t_compare* cmp);

/* ---- models (f32) ---- */

typedef struct p2t_model p2t_model;

P2T_API p2t_status p2t_model_create(const p2t_config* cfg, uint64_t seed, p2t_model** out);
P2T_API p2t_status p2t_model_load(const char* path, p2t_model** out);
P2T_API p2t_status p2t_model_save(const p2t_model* model, const char* path);
/* Copy of the model's configuration; free with p2t_config_free. */
P2T_API p2t_status p2t_model_config(const p2t_model* model, p2t_config** out);
P2T_API p2t_status p2t_model_parameter_count(const p2t_model* model, uint64_t* out);
/* input is [batch, channels, h, w] row-major; logits receives [batch, num_classes]. */
P2T_API p2t_status p2t_model_forward(p2t_model* model, const float* input, size_t batch, size_t channels, size_t h,
                                     size_t w, float* logits, size_t logits_len);
/* Output of stage `stage` (0-based) as [batch, C, H, W]. shape[4] is always
 * filled; out may be NULL to query the shape only. */
P2T_API p2t_status p2t_model_features(p2t_model* model, const float* input, size_t batch, size_t channels, size_t h,
                                      size_t w, size_t stage, float* out, size_t out_len, size_t* shape);
P2T_API void p2t_model_free(p2t_model* model);

/* ---- training ---- */

typedef struct p2t_run_config p2t_run_config;

typedef struct p2t_train_record {
  size_t step;
  double loss;
  double train_accuracy;
  double lr;
} p2t_train_record;

typedef void (*p2t_train_callback)(const p2t_train_record* record, void* user);

P2T_API p2t_status p2t_run_config_load(const char* path, p2t_run_config** out);
P2T_API p2t_status p2t_run_config_from_json(const char* json, p2t_run_config** out);
/* Effective configuration after defaulting. */
P2T_API p2t_status p2t_run_config_to_json(const p2t_run_config* rc, char** out);
P2T_API void p2t_run_config_free(p2t_run_config* rc);

/* Runs training and writes the output directory. `last` (optional) receives
 * the final record. On P2T_ERR_DIVERGENCE, *diverged_step (optional) holds
 * the step at which the loss stopped being finite. */
P2T_API p2t_status p2t_train(const p2t_run_config* rc, p2t_train_callback callback, void* user,
                             p2t_train_record* last, size_t* diverged_step);

/* ---- gradient checks (f64) ---- */

typedef struct p2t_gradcheck p2t_gradcheck;

/* scope: "ops", "block" or "model". */
P2T_API p2t_status p2t_gradcheck_run(const char* scope, p2t_gradcheck** out);
P2T_API double p2t_gradcheck_tolerance(const p2t_gradcheck* g);
P2T_API int p2t_gradcheck_passed(const p2t_gradcheck* g);
P2T_API size_t p2t_gradcheck_case_count(const p2t_gradcheck* g);
P2T_API p2t_status p2t_gradcheck_case(const p2t_gradcheck* g, size_t index, const char** name, double* max_rel_error,
                                      size_t* checked, int* passed);
P2T_API void p2t_gradcheck_free(p2t_gradcheck* g);

#ifdef __cplusplus
}
#endif

#endif /* P2T_H */
