#ifndef OTLAB_OTLAB_H
#define OTLAB_OTLAB_H

/* C interface to the transport library. All functions returning
 * otlab_status set a thread-local message retrievable via otlab_last_error
 * on failure. Handles are created by otlab_* factories and released with the
 * matching *_free; passing NULL where a handle is required yields
 * OTLAB_ERR_INVALID. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef OTLAB_API
#define OTLAB_API __attribute__((visibility("default")))
#endif

typedef enum otlab_status {
  OTLAB_OK = 0,
  OTLAB_ERR_VIOLATION = 1, /* an asserted inequality failed */
  OTLAB_ERR_CONFIG = 2,    /* bad input, bad config, or I/O failure */
  OTLAB_ERR_NUMERIC = 3,   /* solver or numerical failure */
  OTLAB_ERR_INVALID = 4    /* NULL handle or out-pointer misuse */
} otlab_status;

typedef struct otlab_measure otlab_measure;
typedef struct otlab_coupling otlab_coupling;
typedef struct otlab_map otlab_map;

OTLAB_API const char* otlab_version(void);
/* Message for the most recent failure on this thread; never NULL. */
OTLAB_API const char* otlab_last_error(void);

/* ---- measures ---- */

/* points: n*d doubles, row major; weights: n doubles, or NULL for uniform. */
OTLAB_API otlab_status otlab_measure_create(const double* points,
                                            const double* weights, int64_t n,
                                            int32_t d, otlab_measure** out);
/* Reads .json or .csv by extension. */
OTLAB_API otlab_status otlab_measure_read(const char* path,
                                          otlab_measure** out);
OTLAB_API otlab_status otlab_measure_write(const otlab_measure* m,
                                           const char* path);
OTLAB_API int64_t otlab_measure_size(const otlab_measure* m);
OTLAB_API int32_t otlab_measure_dim(const otlab_measure* m);
/* points must hold n*d doubles, weights n doubles; either may be NULL. */
OTLAB_API otlab_status otlab_measure_copy_data(const otlab_measure* m,
                                               double* points,
                                               double* weights);
OTLAB_API void otlab_measure_free(otlab_measure* m);

/* ---- exact transport ---- */

/* max_pivots/time_limit_seconds of 0 mean unlimited. */
OTLAB_API otlab_status otlab_solve(const otlab_measure* source,
                                   const otlab_measure* target,
                                   int64_t max_pivots,
                                   double time_limit_seconds,
                                   otlab_coupling** out);
OTLAB_API double otlab_coupling_cost(const otlab_coupling* c);
OTLAB_API int64_t otlab_coupling_entry_count(const otlab_coupling* c);
/* Arrays must hold entry_count elements each; any may be NULL. */
OTLAB_API otlab_status otlab_coupling_copy_entries(const otlab_coupling* c,
                                                   int64_t* rows,
                                                   int64_t* cols,
                                                   double* mass);
OTLAB_API otlab_status otlab_coupling_write(const otlab_coupling* c,
                                            const char* path);
OTLAB_API void otlab_coupling_free(otlab_coupling* c);

/* 2-Wasserstein distance between two discrete measures. */
OTLAB_API otlab_status otlab_w2(const otlab_measure* a, const otlab_measure* b,
                                double* out);

/* ---- transport map estimators ---- */

OTLAB_API otlab_status otlab_fit_one_nn(const otlab_coupling* plan,
                                        otlab_map** out);
/* xs, ys: samples of equal dimension; weights are ignored. */
OTLAB_API otlab_status otlab_fit_histogram(const otlab_measure* xs,
                                           const otlab_measure* ys,
                                           int64_t cells_per_axis,
                                           otlab_map** out);
OTLAB_API int32_t otlab_map_dim(const otlab_map* map);
/* points: n*d row major in, out: n*d row major result. */
OTLAB_API otlab_status otlab_map_apply(const otlab_map* map,
                                       const double* points, int64_t n,
                                       int32_t d, double* out);
/* Reads a headerless CSV of d-column query points, writes mapped points. */
OTLAB_API otlab_status otlab_map_transform_csv(const otlab_map* map,
                                               const char* in_csv,
                                               const char* out_csv);
OTLAB_API otlab_status otlab_map_write(const otlab_map* map, const char* path);
OTLAB_API otlab_status otlab_map_read(const char* path, otlab_map** out);
OTLAB_API void otlab_map_free(otlab_map* map);

/* ---- experiments ---- */

/* config_json: experiment config object; overrides: n_overrides strings of
 * the form "key=value" applied on top. On OTLAB_OK or OTLAB_ERR_VIOLATION,
 * *summary_json receives a malloc'd summary string to release with
 * otlab_string_free. Reports are written under the configured out_dir. */
OTLAB_API otlab_status otlab_run_experiment(const char* config_json,
                                            const char* const* overrides,
                                            int32_t n_overrides,
                                            char** summary_json);
/* Re-renders the log-log plot for a per-trial rate CSV. */
OTLAB_API otlab_status otlab_render_rate_plot(const char* csv_path,
                                              const char* svg_path);
OTLAB_API void otlab_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* OTLAB_OTLAB_H */
