#ifndef BRC_FFI_H
#define BRC_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrcCell {
  BRC_CELL_BRC = 0,
  BRC_CELL_NBRC = 1,
  BRC_CELL_GRU = 2,
  BRC_CELL_LSTM = 3,
  BRC_CELL_RNN = 4,
} BrcCell;

typedef enum BrcStability {
  BRC_STABILITY_STABLE = 0,
  BRC_STABILITY_UNSTABLE = 1,
  BRC_STABILITY_SINGULAR = 2,
} BrcStability;

typedef enum BrcStatus {
  BRC_STATUS_OK = 0,
  BRC_STATUS_NULL_POINTER = 1,
  BRC_STATUS_INVALID_ARGUMENT = 2,
  BRC_STATUS_SHAPE = 3,
  BRC_STATUS_IO = 4,
  BRC_STATUS_CHECKPOINT = 5,
  BRC_STATUS_NON_FINITE = 6,
  BRC_STATUS_BUFFER_TOO_SMALL = 7,
  BRC_STATUS_PANIC = 8,
} BrcStatus;

/**
 * Opaque network handle.
 */
typedef struct BrcNetwork BrcNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *brc_last_error(void);

/**
 * Library version string (static).
 */
const char *brc_version(void);

/**
 * Creates a randomly initialized network with `n_layers` recurrent layers.
 * `softmax` selects a softmax output head instead of a linear one.
 *
 * # Safety
 * `layers` must point to `n_layers` values and `out` must be writable.
 */
enum BrcStatus brc_network_new(enum BrcCell cell,
                               const size_t *layers,
                               size_t n_layers,
                               size_t input_dim,
                               size_t output_dim,
                               bool softmax,
                               uint64_t seed,
                               struct BrcNetwork **out);

/**
 * Loads a network from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum BrcStatus brc_network_load(const char *path, struct BrcNetwork **out);

/**
 * Writes a network checkpoint.
 *
 * # Safety
 * `net` must come from this library; `path` must be NUL-terminated.
 */
enum BrcStatus brc_network_save(const struct BrcNetwork *net, const char *path);

/**
 * Runs one `[t_len x input_dim]` row-major sequence and writes the
 * `output_dim` head outputs to `out`.
 *
 * # Safety
 * `seq` must hold `t_len * input_dim` values and `out` `out_len` values.
 */
enum BrcStatus brc_network_forward(const struct BrcNetwork *net,
                                   const double *seq,
                                   size_t t_len,
                                   size_t input_dim,
                                   double *out,
                                   size_t out_len);

/**
 * Input width of the network, 0 for a null handle.
 *
 * # Safety
 * `net` must be null or come from this library.
 */
size_t brc_network_input_dim(const struct BrcNetwork *net);

/**
 * Output width of the network, 0 for a null handle.
 *
 * # Safety
 * `net` must be null or come from this library.
 */
size_t brc_network_output_dim(const struct BrcNetwork *net);

/**
 * Total number of trainable parameters, 0 for a null handle.
 *
 * # Safety
 * `net` must be null or come from this library.
 */
size_t brc_network_num_params(const struct BrcNetwork *net);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void brc_network_free(struct BrcNetwork *net);

/**
 * Fixed points of the scalar bistable update, ascending. `count` receives
 * the number found; if it exceeds `capacity` the call returns
 * `BufferTooSmall` and writes nothing else.
 *
 * # Safety
 * `h_out` and `stability_out` must hold `capacity` entries; `count` writable.
 */
enum BrcStatus brc_fixed_points(double a,
                                double c,
                                double drive,
                                double *h_out,
                                enum BrcStability *stability_out,
                                size_t capacity,
                                size_t *count);

/**
 * Iterates the scalar cell over `n` steps; `traj_out` receives `n + 1` values.
 *
 * # Safety
 * `a`, `c`, `drive` must hold `n` values and `traj_out` `n + 1`.
 */
enum BrcStatus brc_simulate_scalar_cell(const double *a,
                                        const double *c,
                                        const double *drive,
                                        size_t n,
                                        double h0,
                                        double *traj_out);

/**
 * Drive magnitude where bistability ends for gain `a > 1`; NaN otherwise.
 */
double brc_fold_drive(double a);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRC_FFI_H */
