#ifndef RELSYNC_H
#define RELSYNC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RelsyncStatus {
  RELSYNC_STATUS_OK = 0,
  RELSYNC_STATUS_NULL_POINTER = 1,
  RELSYNC_STATUS_INVALID_UTF8 = 2,
  RELSYNC_STATUS_CONFIG = 3,
  RELSYNC_STATUS_DIMENSION = 4,
  RELSYNC_STATUS_INVALID_MODEL = 5,
  RELSYNC_STATUS_NOT_CONVERGENT = 6,
  RELSYNC_STATUS_NUMERICAL = 7,
  RELSYNC_STATUS_NOT_A_CHAIN = 8,
  RELSYNC_STATUS_BUFFER_TOO_SMALL = 9,
  RELSYNC_STATUS_OUT_OF_RANGE = 10,
  RELSYNC_STATUS_IO = 11,
  RELSYNC_STATUS_PANIC = 12,
} RelsyncStatus;

/**
 * A loaded scenario.
 */
typedef struct RelsyncScenario RelsyncScenario;

/**
 * Per-iteration error statistics from a Monte Carlo run.
 */
typedef struct RelsyncStats RelsyncStats;

/**
 * Outcome of the mean-square convergence test.
 */
typedef struct RelsyncCertificate {
  /**
   * Spectral radius of the second-moment operator.
   */
  double rho;
  bool union_connected;
  bool references_reach_all;
  bool ms_convergent;
  bool hypotheses_hold;
} RelsyncCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *relsync_last_error(void);

/**
 * Parses a scenario from TOML text. Relative paths inside it resolve against
 * the working directory.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum RelsyncStatus relsync_scenario_from_toml(const char *toml, struct RelsyncScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum RelsyncStatus relsync_scenario_load(const char *path, struct RelsyncScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be used afterwards. Null is ignored.
 */
void relsync_scenario_free(struct RelsyncScenario *scenario);

/**
 * Node counts and run length of a scenario. Any output pointer may be null.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
enum RelsyncStatus relsync_scenario_shape(const struct RelsyncScenario *scenario,
                                          size_t *n_basic,
                                          size_t *n_reference,
                                          size_t *steps);

/**
 * Seed given in the scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum RelsyncStatus relsync_scenario_seed(const struct RelsyncScenario *scenario, uint64_t *out);

/**
 * Runs the convergence test on a chain scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum RelsyncStatus relsync_analyze(const struct RelsyncScenario *scenario,
                                   struct RelsyncCertificate *out);

/**
 * Limiting mean and variance of the basic-node errors. Either buffer may be
 * null; a non-null buffer needs room for `n_basic` values.
 *
 * # Safety
 * `scenario` must be a live handle and each non-null buffer must hold `len` doubles.
 */
enum RelsyncStatus relsync_steady_state(const struct RelsyncScenario *scenario,
                                        double *mean,
                                        double *variance,
                                        size_t len);

/**
 * Runs one trial and writes the full estimate vector at every iteration,
 * row `k` at offset `k * (n_basic + n_reference)`, `k = 0..=steps`.
 *
 * # Safety
 * `scenario` must be a live handle and `estimates` must hold `len` doubles.
 */
enum RelsyncStatus relsync_simulate(const struct RelsyncScenario *scenario,
                                    uint64_t seed,
                                    size_t trial,
                                    double *estimates,
                                    size_t len);

/**
 * Runs `trials` trials on `workers` threads (0 uses every core).
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum RelsyncStatus relsync_montecarlo(const struct RelsyncScenario *scenario,
                                      uint64_t seed,
                                      size_t trials,
                                      size_t workers,
                                      struct RelsyncStats **out);

/**
 * # Safety
 * `stats` must come from this library and not be used afterwards. Null is ignored.
 */
void relsync_stats_free(struct RelsyncStats *stats);

/**
 * Trial count, run length and basic node count. Any output pointer may be null.
 *
 * # Safety
 * `stats` must be a live handle.
 */
enum RelsyncStatus relsync_stats_shape(const struct RelsyncStats *stats,
                                       size_t *trials,
                                       size_t *steps,
                                       size_t *n_basic);

/**
 * Sample mean and unbiased variance of the basic-node errors at iteration
 * `k`. Either buffer may be null. Variances need at least two trials.
 *
 * # Safety
 * `stats` must be a live handle and each non-null buffer must hold `len` doubles.
 */
enum RelsyncStatus relsync_stats_at(const struct RelsyncStats *stats,
                                    size_t k,
                                    double *mean,
                                    double *variance,
                                    size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELSYNC_H */
