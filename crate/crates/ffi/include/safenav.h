#ifndef SAFENAV_H
#define SAFENAV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SafenavStatus {
  SAFENAV_STATUS_OK = 0,
  SAFENAV_STATUS_NULL_POINTER = 1,
  SAFENAV_STATUS_INVALID_ARGUMENT = 2,
  SAFENAV_STATUS_CONFIG = 3,
  SAFENAV_STATUS_DIMENSION_MISMATCH = 4,
  SAFENAV_STATUS_IO = 5,
  /**
   * Numerical failure inside the engine (non-PSD covariance, broken invariant).
   */
  SAFENAV_STATUS_NUMERIC = 6,
  /**
   * The requested data does not exist yet, e.g. no map before the first cycle.
   */
  SAFENAV_STATUS_NOT_AVAILABLE = 7,
  SAFENAV_STATUS_PANIC = 8,
} SafenavStatus;

/**
 * Opaque snapshot of a fused occupancy map.
 */
typedef struct SafenavMap SafenavMap;

/**
 * Opaque mission handle.
 */
typedef struct SafenavMission SafenavMission;

/**
 * Outcome of a mission, or its state so far.
 */
typedef struct SafenavReport {
  /**
   * True when the goal was reached without collisions.
   */
  bool success;
  /**
   * 0 running, 1 goal reached, 2 returned home, 3 emergency stop, 4 timeout.
   */
  int32_t state;
  /**
   * Simulated time the goal was reached, NaN if it was not.
   */
  double goal_time;
  double path_length;
  size_t iterations;
  size_t collisions;
  bool contingency;
} SafenavReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *safenav_last_error(void);

/**
 * Radius in standard deviations of the ball holding mass `alpha` of a
 * `dim`-dimensional standard Gaussian.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum SafenavStatus safenav_critical_value(double alpha, size_t dim, double *out);

/**
 * Create a mission from TOML text plus `section.key=value` overrides.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string (it may be empty),
 * `overrides` an array of `n_overrides` such strings (or NULL when
 * `n_overrides` is 0) and `out` a valid pointer.
 */
enum SafenavStatus safenav_mission_new(const char *config_toml,
                                       const char *const *overrides,
                                       size_t n_overrides,
                                       struct SafenavMission **out);

/**
 * Release a mission. NULL is ignored.
 *
 * # Safety
 * `mission` must come from [`safenav_mission_new`] and not be used afterwards.
 */
void safenav_mission_free(struct SafenavMission *mission);

/**
 * Run one planning cycle. `finished` is set once the mission has ended.
 *
 * # Safety
 * `mission` must be a live handle and `finished` a valid pointer.
 */
enum SafenavStatus safenav_mission_step(struct SafenavMission *mission, bool *finished);

/**
 * Run the mission to its end and fill `report`.
 *
 * # Safety
 * `mission` must be a live handle and `report` a valid pointer.
 */
enum SafenavStatus safenav_mission_run(struct SafenavMission *mission,
                                       struct SafenavReport *report);

/**
 * State of the mission so far.
 *
 * # Safety
 * `mission` must be a live handle and `report` a valid pointer.
 */
enum SafenavStatus safenav_mission_report(const struct SafenavMission *mission,
                                          struct SafenavReport *report);

/**
 * Believed position of the vehicle. Writes up to `cap` coordinates and
 * stores the workspace dimension in `len`.
 *
 * # Safety
 * `mission` must be a live handle, `out` must hold `cap` doubles and
 * `len` must be a valid pointer.
 */
enum SafenavStatus safenav_mission_position(const struct SafenavMission *mission,
                                            double *out,
                                            size_t cap,
                                            size_t *len);

/**
 * Snapshot of the most recent fused map. Fails with `NotAvailable`
 * before the first planning cycle.
 *
 * # Safety
 * `mission` must be a live handle and `out` a valid pointer.
 */
enum SafenavStatus safenav_mission_map(const struct SafenavMission *mission,
                                       struct SafenavMap **out);

/**
 * Release a map. NULL is ignored.
 *
 * # Safety
 * `map` must come from [`safenav_mission_map`] and not be used afterwards.
 */
void safenav_map_free(struct SafenavMap *map);

/**
 * Occupancy probability at a world point. `known` is false (and `prob`
 * 0.5) for never-observed cells.
 *
 * # Safety
 * `map` must be a live handle, `point` must hold `dim` doubles and the
 * output pointers must be valid.
 */
enum SafenavStatus safenav_map_probability(const struct SafenavMap *map,
                                           const double *point,
                                           size_t dim,
                                           double *prob,
                                           bool *known);

/**
 * Collision probability of a Gaussian position (axis standard deviations
 * `sigmas`) centred at a world point, evaluated with confidence `alpha`.
 *
 * # Safety
 * `map` must be a live handle, `point` and `sigmas` must each hold `dim`
 * doubles and `out` must be valid.
 */
enum SafenavStatus safenav_map_collision_probability(const struct SafenavMap *map,
                                                     const double *point,
                                                     const double *sigmas,
                                                     size_t dim,
                                                     double alpha,
                                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAFENAV_H */
