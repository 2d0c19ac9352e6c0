#ifndef KIKUCHI_H
#define KIKUCHI_H

#include <stddef.h>
#include <stdint.h>

#if defined(KK_BUILDING_LIBRARY)
#define KK_API __attribute__((visibility("default")))
#else
#define KK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kk_status {
    KK_OK = 0,
    KK_INVALID_ARGUMENT = 1,
    KK_FORMAT_ERROR = 2,
    KK_RESOURCE_LIMIT = 3,
    KK_CONFIG_ERROR = 4,
    KK_IO_ERROR = 5,
    KK_BUFFER_TOO_SMALL = 6,
    KK_INTERNAL_ERROR = 7
} kk_status;

typedef enum kk_distribution {
    KK_GAUSSIAN = 0,
    KK_RADEMACHER = 1,
    KK_PLANTED_GAUSSIAN = 2,
    KK_PLANTED_RADEMACHER = 3
} kk_distribution;

typedef enum kk_prior { KK_PRIOR_RADEMACHER = 0, KK_PRIOR_GAUSSIAN = 1 } kk_prior;

typedef struct kk_tensor kk_tensor;
typedef struct kk_operator kk_operator;

/* Message of the last failing call on this thread ("" if none). */
KK_API const char* kk_last_error(void);
/* Byte offset of the last KK_FORMAT_ERROR on this thread. */
KK_API uint64_t kk_last_error_offset(void);
KK_API const char* kk_version(void);
KK_API const char* kk_status_name(kk_status s);

KK_API kk_status kk_distribution_parse(const char* name, kk_distribution* out);
KK_API const char* kk_distribution_name(kk_distribution d);

/* Tensors */
typedef struct kk_tensor_info {
    uint32_t n;
    uint32_t r;
    kk_distribution dist;
    uint64_t seed;
    uint64_t entries;
} kk_tensor_info;

KK_API kk_status kk_tensor_sample(uint32_t n, uint32_t r, kk_distribution dist, uint64_t seed, kk_tensor** out);
KK_API kk_status kk_tensor_from_entries(uint32_t n, uint32_t r, kk_distribution dist, uint64_t seed,
                                        const double* entries, uint64_t count, kk_tensor** out);
KK_API kk_status kk_tensor_load(const char* path, kk_tensor** out);
KK_API kk_status kk_tensor_save(const kk_tensor* t, const char* path);
KK_API kk_status kk_tensor_info_get(const kk_tensor* t, kk_tensor_info* out);
/* Borrowed pointer, valid until kk_tensor_free. */
KK_API kk_status kk_tensor_entries(const kk_tensor* t, const double** data, uint64_t* count);
KK_API kk_status kk_spike_sample(uint32_t n, kk_prior prior, uint64_t seed, double* out);
KK_API kk_status kk_tensor_add_spike(const kk_tensor* t, const double* v, uint32_t n, double lambda, kk_tensor** out);
KK_API void kk_tensor_free(kk_tensor* t);

/* Kikuchi operator */
KK_API kk_status kk_operator_create(const kk_tensor* t, uint32_t ell, unsigned threads, kk_operator** out);
KK_API kk_status kk_operator_dim(const kk_operator* op, uint64_t* out);
KK_API kk_status kk_operator_matvec(const kk_operator* op, const double* x, double* y, uint64_t len);
/* Row-major dim x dim matrix from the entry definition; fails above cap.
   len below dim * dim gives KK_BUFFER_TOO_SMALL. */
KK_API kk_status kk_operator_dense(const kk_operator* op, uint64_t cap, double* out, uint64_t len);
KK_API void kk_operator_free(kk_operator* op);
KK_API kk_status kk_row_degree(uint32_t n, uint32_t ell, uint32_t r, char* buf, size_t len, size_t* needed);

/* Spectral estimation */
typedef struct kk_spectral_options {
    double tol;
    uint32_t max_iter;
    uint32_t restarts;
    uint64_t seed;
} kk_spectral_options;

typedef struct kk_spectral_estimate {
    double norm;
    uint32_t iterations;
    double residual;
    int converged;
    uint32_t restarts_used;
} kk_spectral_estimate;

KK_API void kk_spectral_defaults(kk_spectral_options* opt);
KK_API kk_status kk_estimate_norm(const kk_operator* op, const kk_spectral_options* opt, kk_spectral_estimate* out);

/* Detection and recovery */
typedef enum kk_calibration { KK_CALIBRATION_EMPIRICAL = 0, KK_CALIBRATION_ANALYTIC = 1 } kk_calibration;

typedef struct kk_detect_params {
    kk_calibration mode;
    double lambda;
    double norm_bound;
    uint32_t calibration_trials;
    double quantile;
    kk_distribution noise;
    int has_null_threshold;
    double null_threshold;
    kk_spectral_options spectral;
    unsigned threads;
} kk_detect_params;

typedef struct kk_detect_result {
    int planted;
    double measured_norm;
    double threshold;
    double lambda_min_detectable;
    kk_spectral_estimate estimate;
} kk_detect_result;

typedef struct kk_recover_result {
    int has_correlation;
    double correlation;
    double signed_correlation;
    double eigenvector_residual;
    int converged;
    uint32_t tie_votes;
    kk_spectral_estimate estimate;
} kk_recover_result;

KK_API void kk_detect_defaults(kk_detect_params* p);
KK_API kk_status kk_calibrate_null(uint32_t n, uint32_t ell, uint32_t r, kk_distribution noise, uint32_t trials,
                                   double quantile, const kk_spectral_options* opt, uint64_t seed, unsigned threads,
                                   double* threshold);
KK_API kk_status kk_detect(const kk_tensor* t, uint32_t ell, const kk_detect_params* p, uint64_t seed,
                           kk_detect_result* out);
/* truth may be NULL; v_hat receives n signs. */
KK_API kk_status kk_recover(const kk_tensor* t, uint32_t ell, const kk_spectral_options* opt, const double* truth,
                            unsigned threads, double* v_hat, kk_recover_result* out);
KK_API kk_status kk_planted_qform(uint32_t n, uint32_t ell, uint32_t r, double lambda, double* out);
KK_API kk_status kk_lambda_min_detectable(uint32_t n, uint32_t ell, uint32_t r, double norm_bound, double* out);

/* Trace oracle. Exact integers and rationals are written as decimal strings;
   `needed` receives the buffer size including the terminator. */
KK_API kk_status kk_expected_trace(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, kk_distribution dist,
                                   uint64_t node_budget, unsigned threads, char* buf, size_t len, size_t* needed);
KK_API kk_status kk_expected_trace_bruteforce(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, char* buf, size_t len,
                                              size_t* needed);
KK_API kk_status kk_monte_carlo_trace(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, kk_distribution dist,
                                      uint64_t trials, uint64_t seed, double* mean, double* standard_error);
KK_API kk_status kk_lower_bound_count(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, char* buf, size_t len,
                                      size_t* needed);

/* sets: num_sets * ell sorted elements. valid: closed, steps of size r and
   every hyperedge used an even number of times. Return 0 to stop. A NULL
   callback only counts. */
typedef int (*kk_walk_callback)(const uint32_t* sets, size_t num_sets, uint32_t ell, int valid, void* user);
KK_API kk_status kk_lower_bound_generate(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, uint64_t limit,
                                         kk_walk_callback cb, void* user, uint64_t* emitted);

/* Experiments */
typedef struct kk_sweep_summary {
    uint64_t rows_total;
    uint64_t rows_computed;
    uint64_t rows_reused;
    uint64_t not_converged;
} kk_sweep_summary;

typedef enum kk_axis { KK_AXIS_N = 0, KK_AXIS_ELL = 1 } kk_axis;

typedef struct kk_scaling_fit {
    double slope;
    double intercept;
    double r_squared;
    uint64_t points;
} kk_scaling_fit;

typedef struct kk_spectrum_summary {
    uint64_t pooled_count;
    double m2;
    double m4;
    double ratio;
    double semicircle_ratio;
    double trace_residual;
    double frobenius_residual;
} kk_spectrum_summary;

KK_API kk_status kk_validate_sweep_config(const char* text);
KK_API kk_status kk_run_sweep_text(const char* text, kk_sweep_summary* out);
KK_API kk_status kk_run_sweep_file(const char* path, kk_sweep_summary* out);
/* Output CSV path named by a sweep config file. */
KK_API kk_status kk_sweep_output_path(const char* config_path, char* buf, size_t len, size_t* needed);
KK_API kk_status kk_fit_scaling_file(const char* csv_path, kk_axis axis, kk_scaling_fit* out);
KK_API kk_status kk_spectrum_report(uint32_t n, uint32_t ell, uint32_t r, uint32_t samples, uint64_t seed,
                                    kk_distribution dist, const char* prefix, uint32_t bins, kk_spectrum_summary* out);
KK_API double kk_normalized_norm(uint32_t n, uint32_t ell, uint32_t r, double measured);

#ifdef __cplusplus
}
#endif

#endif
