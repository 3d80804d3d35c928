#ifndef SKM_H
#define SKM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes. Zero is success.
typedef enum SkmStatus {
  SKM_STATUS_OK = 0,
  SKM_STATUS_NULL_POINTER = 1,
  SKM_STATUS_INVALID_ARGUMENT = 2,
  SKM_STATUS_DIMENSION_MISMATCH = 3,
  SKM_STATUS_INVALID_MODEL = 4,
  // Event cap hit, non-finite hazard or an impossible transition.
  SKM_STATUS_SIMULATION = 5,
  // Filter or weight degeneracy.
  SKM_STATUS_DEGENERATE = 6,
  SKM_STATUS_PARSE = 7,
  SKM_STATUS_BUFFER_TOO_SMALL = 8,
  SKM_STATUS_PANIC = 9,
  SKM_STATUS_INTERNAL = 10,
} SkmStatus;

// Opaque reaction network.
typedef struct SkmNetwork SkmNetwork;

// Opaque observation record with its observation model.
typedef struct SkmObservations SkmObservations;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to fit) and returns the full message length in bytes, excluding
// the terminator. Pass a null `buf` to query the length.
//
// # Safety
// `buf` must be null or point to `capacity` writable bytes.
size_t skm_last_error_message(char *buf, size_t capacity);

// Library version as a static NUL-terminated string.
const char *skm_version(void);

// The five-species, eight-reaction prokaryotic auto-regulation network.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle to free
// with [`skm_network_free`].
enum SkmStatus skm_network_prokaryotic(struct SkmNetwork **out);

// Parses a network from its JSON document.
//
// # Safety
// `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum SkmStatus skm_network_from_json(const char *json, struct SkmNetwork **out);

// Writes the network's JSON document into `buf` (NUL-terminated). `written`
// receives the length excluding the terminator; if `capacity` is too small
// nothing is written and `BufferTooSmall` is returned with `written` set to
// the required length.
//
// # Safety
// `net` must be a live handle, `buf` must hold `capacity` bytes (or be null
// when `capacity` is 0) and `written` must be valid.
enum SkmStatus skm_network_to_json(const struct SkmNetwork *net,
                                   char *buf,
                                   size_t capacity,
                                   size_t *written);

// # Safety
// `net` must be null or a handle not yet freed.
void skm_network_free(struct SkmNetwork *net);

// Species count V, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t skm_network_species_count(const struct SkmNetwork *net);

// Reaction count K, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t skm_network_reaction_count(const struct SkmNetwork *net);

// Mass-action hazards `h_k(x, c)` for state `x` (length V) and rate
// constants `rates` (length K). `hazards` receives K values and `total`
// (optional) their sum.
//
// # Safety
// Pointers must reference arrays of the stated lengths; `total` may be null.
enum SkmStatus skm_network_hazards(const struct SkmNetwork *net,
                                   const int64_t *x,
                                   size_t species,
                                   const double *rates,
                                   size_t reactions,
                                   double *hazards,
                                   double *total);

// Gillespie simulation from `x0` over `steps` intervals of length `delta`.
// `states` receives `steps × V` counts, row `n` being the state at
// `(n + 1)·delta`. The same seed always gives the same path.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SkmStatus skm_simulate(const struct SkmNetwork *net,
                            const double *rates,
                            size_t reactions,
                            const int64_t *x0,
                            size_t species,
                            double delta,
                            size_t steps,
                            uint64_t seed,
                            int64_t *states);

// Observation record `y` (`n × d`, row-major) for the model
// `y = M x + N(0, σ² I)` with `M` given as `d × species`, row-major.
//
// # Safety
// Pointers must reference arrays of the stated lengths and `out` be valid.
enum SkmStatus skm_observations_new(const double *y,
                                    size_t n,
                                    size_t d,
                                    const double *matrix,
                                    size_t species,
                                    double noise_variance,
                                    double delta,
                                    struct SkmObservations **out);

// # Safety
// `obs` must be null or a handle not yet freed.
void skm_observations_free(struct SkmObservations *obs);

// Bootstrap particle-filter estimate of `ln p(y | c)` with `particles`
// particles and independent Poisson initial counts with means
// `initial_means` (length V). A degenerate filter yields `-inf` and `Ok`.
//
// # Safety
// Pointers must reference arrays of the stated lengths; handles must be live.
enum SkmStatus skm_filter_log_likelihood(const struct SkmNetwork *net,
                                         const double *rates,
                                         size_t reactions,
                                         const double *initial_means,
                                         size_t species,
                                         const struct SkmObservations *obs,
                                         size_t particles,
                                         uint64_t seed,
                                         double *log_likelihood);

// Normalised clipped weights from `m` log-weights: the `clip` largest are
// flattened to the `clip`-th largest before normalising.
//
// # Safety
// `log_weights` and `weights` must each hold `m` values.
enum SkmStatus skm_clip_weights(const double *log_weights, size_t m, size_t clip, double *weights);

// Normalised effective sample size `1 / (M Σ w²)` of `m` normalised weights.
//
// # Safety
// `weights` must hold `m` values and `ness` be valid.
enum SkmStatus skm_ness_is(const double *weights, size_t m, double *ness);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKM_H */
