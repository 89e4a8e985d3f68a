#ifndef HIVAUG_H
#define HIVAUG_H

#include <stddef.h>

#if defined(HIVAUG_BUILDING_LIBRARY)
#define HIVAUG_API __attribute__((visibility("default")))
#else
#define HIVAUG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit statuses. */
typedef enum {
  HIVAUG_OK = 0,
  HIVAUG_ERR_VALIDATION = 1,
  HIVAUG_ERR_NUMERICAL = 2,
  HIVAUG_ERR_USAGE = 64,
  HIVAUG_ERR_INTERNAL = 70
} hivaug_status;

typedef struct hivaug_config hivaug_config;
typedef struct hivaug_result hivaug_result;

HIVAUG_API const char* hivaug_version(void);
/* Message for the last failing call on this thread; never NULL. */
HIVAUG_API const char* hivaug_last_error(void);

HIVAUG_API hivaug_status hivaug_config_new(hivaug_config** out);
HIVAUG_API hivaug_status hivaug_config_load(const char* path, hivaug_config** out);
HIVAUG_API void hivaug_config_free(hivaug_config* config);
HIVAUG_API hivaug_status hivaug_config_set(hivaug_config* config, const char* key, const char* value);
HIVAUG_API hivaug_status hivaug_config_validate(const hivaug_config* config);
/* HIVAUG_WORKERS, when set, replaces run.workers. */
HIVAUG_API hivaug_status hivaug_config_apply_environment(hivaug_config* config);
/* Copies a NUL-terminated string into buf; *needed gets the full size
   including the terminator. Truncates when len is too small. */
HIVAUG_API hivaug_status hivaug_config_hash(const hivaug_config* config, char* buf, size_t len, size_t* needed);
HIVAUG_API hivaug_status hivaug_config_canonical(const hivaug_config* config, char* buf, size_t len, size_t* needed);

HIVAUG_API size_t hivaug_config_key_count(void);
HIVAUG_API const char* hivaug_config_key_name(size_t index);
HIVAUG_API const char* hivaug_config_key_help(size_t index);

HIVAUG_API size_t hivaug_stage_count(void);
HIVAUG_API const char* hivaug_stage_name(size_t index);

/* Runs a pipeline stage. On validation or numerical failure *out is still
   set when non-NULL, so the caller can read partial outputs. */
HIVAUG_API hivaug_status hivaug_run_stage(const hivaug_config* config, const char* stage, int force,
                                          hivaug_result** out);
HIVAUG_API void hivaug_result_free(hivaug_result* result);
HIVAUG_API const char* hivaug_result_text(const hivaug_result* result);
HIVAUG_API size_t hivaug_result_output_count(const hivaug_result* result);
HIVAUG_API const char* hivaug_result_output(const hivaug_result* result, size_t index);

/* params: t0, t1, r0, beta0, beta1, beta2, beta3. Writes last_year -
   first_year + 1 prevalence values under the flat demographic default. */
HIVAUG_API hivaug_status hivaug_simulate_prevalence(const double params[7], int first_year, int last_year,
                                                    double* prevalence, size_t len);

/* KL(P || Q) between dim-variate normals; covariances row-major. */
HIVAUG_API hivaug_status hivaug_gaussian_kl(size_t dim, const double* mean_p, const double* cov_p,
                                            const double* mean_q, const double* cov_q, double* out);

#ifdef __cplusplus
}
#endif

#endif
