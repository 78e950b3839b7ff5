#ifndef FEDCP_H
#define FEDCP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedcpStatus {
  FEDCP_STATUS_OK = 0,
  FEDCP_STATUS_NULL_POINTER = 1,
  FEDCP_STATUS_INVALID_UTF8 = 2,
  FEDCP_STATUS_PARSE = 3,
  FEDCP_STATUS_CONFIG = 4,
  FEDCP_STATUS_INPUT = 5,
  FEDCP_STATUS_DIMENSION = 6,
  FEDCP_STATUS_NUMERIC = 7,
  FEDCP_STATUS_PROTOCOL = 8,
  FEDCP_STATUS_IO = 9,
  FEDCP_STATUS_FINISHED = 10,
  FEDCP_STATUS_PANIC = 11,
} FedcpStatus;

/**
 * Opaque simulation handle.
 */
typedef struct FedcpSimulation FedcpSimulation;

/**
 * Metrics of one completed round. `pir_mean` is NaN for variants without a
 * policy network.
 */
typedef struct FedcpRoundSummary {
  size_t t;
  size_t n_selected;
  double loss_bef;
  double loss_aft;
  double acc_mean;
  double acc_std;
  double acc_best;
  double pir_mean;
} FedcpRoundSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on this thread.
 */
const char *fedcp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedcp_version(void);

/**
 * Builds a simulation from a JSON config document (the same schema the
 * command-line tool reads). `workers` of 0 means one worker.
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string and `out` a valid
 * pointer to writable storage for one handle.
 */
enum FedcpStatus fedcp_simulation_new(const char *config_json,
                                      size_t workers,
                                      struct FedcpSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from [`fedcp_simulation_new`] that has not
 * been freed.
 */
void fedcp_simulation_free(struct FedcpSimulation *sim);

/**
 * Runs the next round and optionally reports its metrics. Returns
 * `FEDCP_STATUS_FINISHED` once every configured round has run.
 *
 * # Safety
 * `sim` must be a live handle; `out` may be null or point to writable
 * storage.
 */
enum FedcpStatus fedcp_simulation_run_round(struct FedcpSimulation *sim,
                                            struct FedcpRoundSummary *out);

/**
 * Runs every remaining round.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum FedcpStatus fedcp_simulation_run(struct FedcpSimulation *sim);

/**
 * Rounds completed so far; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t fedcp_simulation_round(const struct FedcpSimulation *sim);

/**
 * Configured number of rounds; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t fedcp_simulation_total_rounds(const struct FedcpSimulation *sim);

/**
 * Number of clients; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t fedcp_simulation_num_clients(const struct FedcpSimulation *sim);

/**
 * Best mean accuracy seen so far.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum FedcpStatus fedcp_simulation_best_accuracy(const struct FedcpSimulation *sim, double *out);

/**
 * Per-round CSV (header plus one row per completed round) as a new string
 * owned by the caller.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum FedcpStatus fedcp_simulation_rounds_csv(const struct FedcpSimulation *sim, char **out);

/**
 * Partition sidecar text (one client per line) as a new caller-owned string.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum FedcpStatus fedcp_simulation_partition(const struct FedcpSimulation *sim, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library that has not been freed.
 */
void fedcp_string_free(char *s);

/**
 * Parameter count of a policy network over `k` features, with or without
 * layer normalization.
 *
 * # Safety
 * `out` must be writable.
 */
enum FedcpStatus fedcp_cpn_param_count(size_t k, int layer_norm, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCP_H */
