#ifndef VCVAE_VCVAE_H
#define VCVAE_VCVAE_H

#include <stddef.h>

#if defined(_WIN32)
#define VCVAE_API __declspec(dllexport)
#else
#define VCVAE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vcvae_status {
  VCVAE_OK = 0,
  VCVAE_ERR_INVALID_ARGUMENT = 1,
  VCVAE_ERR_DIMENSION = 2,
  VCVAE_ERR_DECOMPOSITION = 3,
  VCVAE_ERR_CONFIG = 4,
  VCVAE_ERR_IO = 5,
  VCVAE_ERR_FORMAT = 6,
  VCVAE_ERR_NUMERIC = 7,
  VCVAE_ERR_EXISTS = 8,
  VCVAE_ERR_INTERNAL = 9
} vcvae_status;

typedef struct vcvae_config vcvae_config;
typedef struct vcvae_model vcvae_model;

/* Receives one line of progress text; user is passed through untouched. */
typedef void (*vcvae_progress_fn)(const char* line, void* user);

VCVAE_API const char* vcvae_version(void);
VCVAE_API const char* vcvae_status_name(vcvae_status status);
/* Message of the last failure on the calling thread ("" if none). */
VCVAE_API const char* vcvae_last_error(void);

/* Configuration. Keys are "key" for globals or "section.key". */
VCVAE_API vcvae_status vcvae_config_new(vcvae_config** out);
VCVAE_API vcvae_status vcvae_config_load(const char* path, vcvae_config** out);
VCVAE_API vcvae_status vcvae_config_set(vcvae_config* cfg, const char* key, const char* value);
VCVAE_API vcvae_status vcvae_config_validate(const vcvae_config* cfg);
/* Resolved text; *needed receives the size including the terminator. */
VCVAE_API vcvae_status vcvae_config_text(const vcvae_config* cfg, char* buf, size_t len,
                                         size_t* needed);
VCVAE_API void vcvae_config_free(vcvae_config* cfg);

/* Commands. Paths are UTF-8. force != 0 allows overwriting outputs. */

/* run_dir may be NULL for <output_dir>/run-<timestamp>; the directory used is
   copied to run_dir_out when it is not NULL. */
VCVAE_API vcvae_status vcvae_train(const vcvae_config* cfg, const char* run_dir, int force,
                                   vcvae_progress_fn progress, void* user, char* run_dir_out,
                                   size_t run_dir_len);
VCVAE_API vcvae_status vcvae_resume(const char* run_dir, vcvae_progress_fn progress, void* user);
/* components == 0 uses gmm.components. kl_mean/kl_std may be NULL. */
VCVAE_API vcvae_status vcvae_fit_gmm(const vcvae_config* cfg, const char* checkpoint,
                                     size_t components, const char* out, int force,
                                     double* kl_mean, double* kl_std);
/* gmm may be NULL. */
VCVAE_API vcvae_status vcvae_eval(const vcvae_config* cfg, const char* checkpoint,
                                  const char* gmm, const char* out_csv, int force);
/* source is "prior" or "gmm". */
VCVAE_API vcvae_status vcvae_sample(const vcvae_config* cfg, const char* checkpoint,
                                    const char* gmm, size_t n, const char* source,
                                    const char* out_dir, int force);
VCVAE_API vcvae_status vcvae_sweep_sigma(const vcvae_config* cfg, const char* out_dir, int force,
                                         vcvae_progress_fn progress, void* user);

/* Trained models. */
VCVAE_API vcvae_status vcvae_model_load(const char* checkpoint, vcvae_model** out);
/* Any output pointer may be NULL. */
VCVAE_API vcvae_status vcvae_model_info(const vcvae_model* model, size_t* data_dim,
                                        size_t* latent_dim, double* sigma_squared,
                                        int* has_variance_head);
/* x is n rows of data_dim values; mean_out and var_out receive n * data_dim
   values each (var_out may be NULL). */
VCVAE_API vcvae_status vcvae_model_reconstruct(const vcvae_model* model, const double* x, size_t n,
                                               double* mean_out, double* var_out);
VCVAE_API void vcvae_model_free(vcvae_model* model);

#ifdef __cplusplus
}
#endif

#endif
