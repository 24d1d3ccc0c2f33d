#ifndef PREDMDP_H
#define PREDMDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PREDMDP_NOISE_NONE 0

/**
 * `param` is the mixing weight `η`.
 */
#define PREDMDP_NOISE_UNIFORM_MIX 1

/**
 * `param` is the Dirichlet concentration.
 */
#define PREDMDP_NOISE_DIRICHLET_JITTER 2

/**
 * Result of every fallible call.
 */
typedef enum PredmdpStatus {
  PREDMDP_STATUS_OK = 0,
  PREDMDP_STATUS_NULL_POINTER = 1,
  PREDMDP_STATUS_INVALID_ARGUMENT = 2,
  PREDMDP_STATUS_INVALID_MDP = 3,
  PREDMDP_STATUS_SHAPE_MISMATCH = 4,
  PREDMDP_STATUS_NON_CONVERGENCE = 5,
  PREDMDP_STATUS_ENUMERATION_BUDGET = 6,
  PREDMDP_STATUS_PRECONDITION = 7,
  PREDMDP_STATUS_PARSE = 8,
  PREDMDP_STATUS_IO = 9,
  /**
   * A caller-supplied buffer is too small.
   */
  PREDMDP_STATUS_BUFFER_TOO_SMALL = 10,
  PREDMDP_STATUS_PANIC = 11,
  PREDMDP_STATUS_OTHER = 12,
} PredmdpStatus;

/**
 * Opaque validated MDP.
 */
typedef struct PredmdpMdp PredmdpMdp;

/**
 * Opaque prediction oracle with its own RNG stream.
 */
typedef struct PredmdpOracle PredmdpOracle;

/**
 * Opaque weighted set of prediction batches.
 */
typedef struct PredmdpScenarios PredmdpScenarios;

typedef struct PredmdpBudgetInputs {
  double gamma;
  size_t horizon;
  size_t num_states;
  size_t num_actions;
  size_t num_predictable;
  double delta;
  double epsilon;
  double alpha;
} PredmdpBudgetInputs;

typedef struct PredmdpBudget {
  uint64_t n1;
  uint64_t n2;
  uint64_t d1;
  uint64_t d2;
  double n1_raw;
  double n2_raw;
} PredmdpBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *predmdp_version(void);

/**
 * Message of the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *predmdp_last_error_message(void);

/**
 * Builds an MDP from row-major tables: `transition[(s*A + a)*S + s']`,
 * `reward[s*A + a]`.
 *
 * # Safety
 * `transition` and `reward` must point to `S*A*S` and `S*A` doubles.
 */
enum PredmdpStatus predmdp_mdp_new(size_t num_states,
                                   size_t num_actions,
                                   const double *transition,
                                   const double *reward,
                                   double discount,
                                   struct PredmdpMdp **out);

/**
 * Parses the plain-text MDP format.
 *
 * # Safety
 * `text` must be a NUL-terminated UTF-8 string.
 */
enum PredmdpStatus predmdp_mdp_from_text(const char *text, struct PredmdpMdp **out);

/**
 * Random MDP with Dirichlet(1) rows and Uniform[0,1] rewards.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PredmdpStatus predmdp_mdp_random(size_t num_states,
                                      size_t num_actions,
                                      double discount,
                                      uint64_t seed,
                                      struct PredmdpMdp **out);

/**
 * # Safety
 * `mdp` must come from this library and not be used afterwards.
 */
void predmdp_mdp_free(struct PredmdpMdp *mdp);

/**
 * # Safety
 * `mdp` must be a valid handle or null (returns 0).
 */
size_t predmdp_mdp_num_states(const struct PredmdpMdp *mdp);

/**
 * # Safety
 * `mdp` must be a valid handle or null (returns 0).
 */
size_t predmdp_mdp_num_actions(const struct PredmdpMdp *mdp);

/**
 * # Safety
 * `mdp` must be a valid handle or null (returns NaN).
 */
double predmdp_mdp_discount(const struct PredmdpMdp *mdp);

/**
 * Classical value iteration; writes `|S|` values.
 *
 * # Safety
 * `values` must hold `values_len` doubles; `iterations` may be null.
 */
enum PredmdpStatus predmdp_value_iteration(const struct PredmdpMdp *mdp,
                                           double tol,
                                           size_t max_iters,
                                           double *values,
                                           size_t values_len,
                                           size_t *iterations);

/**
 * Draws `count` prediction batches from a fresh oracle.
 *
 * # Safety
 * `predictable_actions` must hold `num_predictable` indices.
 */
enum PredmdpStatus predmdp_scenarios_sample(const struct PredmdpMdp *mdp,
                                            size_t horizon,
                                            const size_t *predictable_actions,
                                            size_t num_predictable,
                                            uint32_t noise_kind,
                                            double noise_param,
                                            size_t count,
                                            uint64_t seed,
                                            struct PredmdpScenarios **out);

/**
 * Exact law of accurate predictions, enumerated up to `cap` batches.
 *
 * # Safety
 * `predictable_actions` must hold `num_predictable` indices.
 */
enum PredmdpStatus predmdp_scenarios_exact(const struct PredmdpMdp *mdp,
                                           size_t horizon,
                                           const size_t *predictable_actions,
                                           size_t num_predictable,
                                           size_t cap,
                                           struct PredmdpScenarios **out);

/**
 * # Safety
 * `scenarios` must be a valid handle or null (returns 0).
 */
size_t predmdp_scenarios_len(const struct PredmdpScenarios *scenarios);

/**
 * # Safety
 * `scenarios` must come from this library and not be used afterwards.
 */
void predmdp_scenarios_free(struct PredmdpScenarios *scenarios);

/**
 * Fixed point of the Bayesian Bellman operator; writes `|S|` values.
 *
 * # Safety
 * Handles must be valid; `values` must hold `values_len` doubles;
 * `iterations` may be null.
 */
enum PredmdpStatus predmdp_bayes_value_iteration(const struct PredmdpMdp *mdp,
                                                 const struct PredmdpScenarios *scenarios,
                                                 double tol,
                                                 size_t max_iters,
                                                 double *values,
                                                 size_t values_len,
                                                 size_t *iterations);

/**
 * Prediction oracle over `mdp`; the handle keeps the MDP alive.
 *
 * # Safety
 * `predictable_actions` must hold `num_predictable` indices.
 */
enum PredmdpStatus predmdp_oracle_new(const struct PredmdpMdp *mdp,
                                      size_t horizon,
                                      const size_t *predictable_actions,
                                      size_t num_predictable,
                                      uint32_t noise_kind,
                                      double noise_param,
                                      uint64_t seed,
                                      struct PredmdpOracle **out);

/**
 * Draws the next batch and plans `K` actions from `state` against it with
 * terminal values `terminal` (length `|S|`).
 *
 * # Safety
 * `oracle` must be valid; `terminal` must hold `terminal_len` doubles;
 * `actions` must hold `actions_len` entries; `expected_return` may be null.
 */
enum PredmdpStatus predmdp_oracle_plan(struct PredmdpOracle *oracle,
                                       size_t state,
                                       const double *terminal,
                                       size_t terminal_len,
                                       size_t *actions,
                                       size_t actions_len,
                                       double *expected_return);

/**
 * # Safety
 * `oracle` must come from this library and not be used afterwards.
 */
void predmdp_oracle_free(struct PredmdpOracle *oracle);

/**
 * Closed-form sample budgets.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum PredmdpStatus predmdp_compute_budget(const struct PredmdpBudgetInputs *inputs,
                                          struct PredmdpBudget *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREDMDP_H */
