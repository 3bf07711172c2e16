#ifndef SPATIAL_DESIGN_H
#define SPATIAL_DESIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID_ARGUMENT = 2,
  SD_STATUS_UNKNOWN_SITE = 3,
  SD_STATUS_DISCONNECTED = 4,
  SD_STATUS_NOT_POSITIVE_DEFINITE = 5,
  SD_STATUS_OUT_OF_DOMAIN = 6,
  SD_STATUS_UNKNOWN_WINDOW = 7,
  SD_STATUS_MISSING_FILE = 8,
  SD_STATUS_IO = 9,
  SD_STATUS_PARSE = 10,
  SD_STATUS_PANIC = 11,
} SdStatus;

// Opaque stream network.
typedef struct SdNetwork SdNetwork;

// Opaque efficiency surface.
typedef struct SdSurface SdSurface;

// Covariance parameters; a component with zero sill is left out.
typedef struct SdCovParams {
  double tail_up_sill;
  double tail_up_range;
  double tail_down_sill;
  double tail_down_range;
  double euclidean_sill;
  double euclidean_range;
  double nugget;
} SdCovParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sd_version(void);

// Message for the last failed call on this thread; empty after success.
// Valid until the next call into the library on the same thread.
const char *sd_last_error_message(void);

// Loads a network from edge and site CSV files.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum SdStatus sd_network_load(const char *edges, const char *sites, struct SdNetwork **out);

// # Safety
// `net` must come from `sd_network_load` and not be used afterwards.
void sd_network_free(struct SdNetwork *net);

// # Safety
// `net` must be a live handle and `out` writable.
enum SdStatus sd_network_site_count(const struct SdNetwork *net, size_t *out);

// Stream distance between two sites.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum SdStatus sd_hydrologic_distance(const struct SdNetwork *net,
                                     uint64_t a,
                                     uint64_t b,
                                     double *out);

// # Safety
// `net` must be a live handle and `out` writable.
enum SdStatus sd_flow_connected(const struct SdNetwork *net, uint64_t a, uint64_t b, bool *out);

// # Safety
// `net` must be a live handle and `out` writable.
enum SdStatus sd_tailup_weight(const struct SdNetwork *net, uint64_t a, uint64_t b, double *out);

// Response covariance of `n` sites, written row-major into `out` (`n * n`).
//
// # Safety
// `sites` must hold `n` ids, `params` must be valid and `out` must hold
// `n * n` doubles.
enum SdStatus sd_covariance_matrix(const struct SdNetwork *net,
                                   const uint64_t *sites,
                                   size_t n,
                                   const struct SdCovParams *params,
                                   double *out);

// KL divergence of `N(mu1, s1)` from `N(mu0, s0)` in `k` dimensions;
// matrices are row-major.
//
// # Safety
// Vectors must hold `k` and matrices `k * k` doubles.
enum SdStatus sd_kl_gaussian(size_t k,
                             const double *mu0,
                             const double *s0,
                             const double *mu1,
                             const double *s1,
                             double *out);

// One-sided rank-sum p-value for `x` shifted to the right of `y`.
//
// # Safety
// `x` and `y` must hold `nx` and `ny` doubles.
enum SdStatus sd_wilcoxon_p(const double *x, size_t nx, const double *y, size_t ny, double *out);

// Approximate-coordinate-exchange acceptance probability for `n` paired draws.
//
// # Safety
// `x` and `y` must hold `n` doubles each.
enum SdStatus sd_ace_p(const double *x, const double *y, size_t n, double *out);

// Loads a surface file written by the `windows` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SdStatus sd_surface_load(const char *path, struct SdSurface **out);

// # Safety
// `s` must come from `sd_surface_load` and not be used afterwards.
void sd_surface_free(struct SdSurface *s);

// # Safety
// `s` must be a live handle and `out` writable.
enum SdStatus sd_surface_window_count(const struct SdSurface *s, size_t *out);

// Efficiency at the global argmax, and its index.
//
// # Safety
// `s` must be a live handle; the out-pointers must be writable.
enum SdStatus sd_surface_argmax(const struct SdSurface *s, size_t *index, double *eff);

// Conditional slice for `fix` (`name:value,...`) as a JSON string, plus
// the retained efficiency. Release the string with `sd_string_free`.
//
// # Safety
// `s` must be a live handle, `fix` a NUL-terminated string and the
// out-pointers writable.
enum SdStatus sd_surface_slice(const struct SdSurface *s,
                               const char *fix,
                               char **json,
                               double *retained);

// # Safety
// `p` must come from this library and not be used afterwards.
void sd_string_free(char *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIAL_DESIGN_H */
