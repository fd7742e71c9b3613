/* C interface to the dynamical systems tree library.
 *
 * All objects are opaque handles created by this library and released with
 * the matching *_free function. Functions returning dst_status leave a
 * message retrievable with dst_last_error() (per thread) on failure.
 */
#ifndef DST_DST_H
#define DST_DST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DST_BUILDING_LIBRARY)
#    define DST_API __declspec(dllexport)
#  else
#    define DST_API __declspec(dllimport)
#  endif
#else
#  define DST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dst_status {
  DST_OK = 0,
  DST_ERROR_USAGE = 1,
  DST_ERROR_DATA = 2,
  DST_ERROR_NUMERICAL = 3
} dst_status;

typedef struct dst_topology dst_topology;
typedef struct dst_model dst_model;
typedef struct dst_dataset dst_dataset;
typedef struct dst_fit_report dst_fit_report;

typedef struct dst_em_config {
  double e_tol;
  double em_tol;
  int32_t max_em_iters;
  int32_t max_sweeps;
  int32_t overrelax;
  double eta_init;
  double eta_grow;
  double eta_shrink;
  uint64_t seed;
  double covariance_floor;
} dst_em_config;

DST_API const char* dst_version(void);
DST_API const char* dst_last_error(void);
/* Releases strings returned by *_to_json. */
DST_API void dst_string_free(char* text);

DST_API void dst_em_config_default(dst_em_config* config);

/* Topology: a model document without "params". */
DST_API dst_status dst_topology_load(const char* path, dst_topology** out);
DST_API void dst_topology_free(dst_topology* topology);

DST_API dst_status dst_model_load(const char* path, dst_model** out);
DST_API dst_status dst_model_from_json(const char* text, dst_model** out);
DST_API dst_status dst_model_save(const dst_model* model, const char* path);
DST_API char* dst_model_to_json(const dst_model* model);
DST_API size_t dst_model_num_nodes(const dst_model* model);
DST_API void dst_model_free(dst_model* model);

/* A data path is one data file or a directory of data files. */
DST_API dst_status dst_dataset_load(const char* path, dst_dataset** out);
DST_API size_t dst_dataset_size(const dst_dataset* data);
DST_API const char* dst_dataset_name(const dst_dataset* data, size_t index);
DST_API dst_status dst_dataset_offset_origin(dst_dataset* data);
DST_API dst_status dst_dataset_save(const dst_dataset* data, size_t index, const char* path);
DST_API void dst_dataset_free(dst_dataset* data);

/* Draws `sequences` independent sequences of steps+1 time points. */
DST_API dst_status dst_sample(const dst_model* model, int32_t steps, uint64_t seed, size_t sequences,
                              dst_dataset** out);

DST_API dst_status dst_initialize(const dst_topology* topology, const dst_dataset* data, uint64_t seed,
                                  dst_model** out);

DST_API dst_status dst_train(const dst_model* start, const dst_dataset* data, const dst_em_config* config,
                             dst_model** out, dst_fit_report** report);
DST_API size_t dst_fit_report_length(const dst_fit_report* report);
DST_API double dst_fit_report_bound(const dst_fit_report* report, size_t index);
DST_API int32_t dst_fit_report_iterations(const dst_fit_report* report);
DST_API int32_t dst_fit_report_converged(const dst_fit_report* report);
DST_API char* dst_fit_report_to_json(const dst_fit_report* report);
DST_API void dst_fit_report_free(dst_fit_report* report);

/* Converged evidence bound of every sequence; `bounds` holds dst_dataset_size entries. */
DST_API dst_status dst_eval(const dst_model* model, const dst_dataset* data, const dst_em_config* config,
                            double* bounds, size_t capacity);

/* Scores sequence `index` under each model; failed models score NaN. */
DST_API dst_status dst_classify(const dst_model* const* models, size_t num_models, const dst_dataset* data,
                                size_t index, const dst_em_config* config, size_t* label, int32_t* tie,
                                double* scores);

/* Exact log-likelihood by enumeration (tiny models only). */
DST_API dst_status dst_oracle_loglik(const dst_model* model, const dst_dataset* data, size_t index,
                                     uint64_t max_paths, double* out);

#ifdef __cplusplus
}
#endif

#endif /* DST_DST_H */
