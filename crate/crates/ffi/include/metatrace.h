#ifndef METATRACE_H
#define METATRACE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtLearnerKind {
  MT_LEARNER_KIND_TD_LAMBDA = 0,
  MT_LEARNER_KIND_TRUE_ONLINE_TD = 1,
  MT_LEARNER_KIND_TRUE_ONLINE_GTD = 2,
} MtLearnerKind;

typedef enum MtStatus {
  MT_STATUS_OK = 0,
  MT_STATUS_NULL_POINTER = 1,
  MT_STATUS_INVALID_ARGUMENT = 2,
  MT_STATUS_INVALID_MODEL = 3,
  MT_STATUS_SINGULAR = 4,
  MT_STATUS_NOT_CONVERGED = 5,
  MT_STATUS_DIVERGENCE = 6,
  MT_STATUS_CONFIG = 7,
  MT_STATUS_IO = 8,
  MT_STATUS_PANIC = 9,
} MtStatus;

typedef enum MtUpdateOutcome {
  MT_UPDATE_OUTCOME_APPLIED = 0,
  MT_UPDATE_OUTCOME_CANCELLED = 1,
  MT_UPDATE_OUTCOME_UNCHANGED = 2,
} MtUpdateOutcome;

typedef struct MtLambda MtLambda;

typedef struct MtLearner MtLearner;

typedef struct MtMdp MtMdp;

typedef struct MtPolicy MtPolicy;

/**
 * Statistics at the successor state consumed by META and λ-greedy.
 */
typedef struct MtMetaInputs {
  double gamma_next;
  double rho_acc;
  double v_next;
  double e_g;
  double e_glambda;
  double var_glambda;
  double kappa;
} MtMetaInputs;

/**
 * One transition for a learner step. `x_t` and `x_next` point at `dim` doubles each.
 */
typedef struct MtTransition {
  const double *x_t;
  const double *x_next;
  size_t dim;
  double reward;
  double gamma_t;
  double gamma_next;
  double lambda_t;
  double lambda_next;
  double rho;
  double alpha;
  double beta;
} MtTransition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
 * `len`). Returns the full message length in bytes, or 0 when there is none.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t mt_last_error(char *buf, size_t len);

/**
 * Parses an MDP from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MtStatus mt_mdp_from_json(const char *json, struct MtMdp **out);

/**
 * RingWorld with `n` non-terminal states (odd) as a finite MDP.
 *
 * # Safety
 * `out` must be writable.
 */
enum MtStatus mt_mdp_ringworld(size_t n, struct MtMdp **out);

/**
 * # Safety
 * `mdp` must come from this library and not be used afterwards.
 */
void mt_mdp_free(struct MtMdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle or null (which yields 0).
 */
size_t mt_mdp_n_states(const struct MtMdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle or null (which yields 0).
 */
size_t mt_mdp_n_actions(const struct MtMdp *mdp);

/**
 * Policy from a row-major `n_states × n_actions` probability matrix.
 *
 * # Safety
 * `probs` must hold `len` doubles; `out` must be writable.
 */
enum MtStatus mt_policy_new(const struct MtMdp *mdp,
                            const double *probs,
                            size_t len,
                            struct MtPolicy **out);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void mt_policy_free(struct MtPolicy *policy);

/**
 * Exact values of `policy` under per-state discounts `gamma` (length n_states).
 *
 * # Safety
 * `gamma` and `values` must hold `n` doubles each.
 */
enum MtStatus mt_solve_values(const struct MtMdp *mdp,
                              const struct MtPolicy *policy,
                              const double *gamma,
                              double *values,
                              size_t n);

/**
 * Normalized state frequencies of `policy`.
 *
 * # Safety
 * `freq` must hold `n` doubles.
 */
enum MtStatus mt_solve_frequencies(const struct MtMdp *mdp,
                                   const struct MtPolicy *policy,
                                   double *freq,
                                   size_t n);

/**
 * ∂J/∂λ' at `lambda_next`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MtStatus mt_meta_partial(double lambda_next, const struct MtMetaInputs *m, double *out);

/**
 * Minimizer of the one-step objective over [0, 1]; `degenerate` reports a vanishing denominator.
 *
 * # Safety
 * Pointers must be valid; `degenerate` may be null.
 */
enum MtStatus mt_meta_minimizer(const struct MtMetaInputs *m, double *out, bool *degenerate);

/**
 * # Safety
 * `out` must be writable.
 */
enum MtStatus mt_lambda_greedy_target(double v_next, double e_g, double var_g, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum MtStatus mt_lambda_new(size_t dim, struct MtLambda **out);

/**
 * # Safety
 * `lambda` must come from this library and not be used afterwards.
 */
void mt_lambda_free(struct MtLambda *lambda);

/**
 * λ(x), clipped to [0, 1].
 *
 * # Safety
 * `x` must hold `dim` doubles.
 */
enum MtStatus mt_lambda_value(const struct MtLambda *lambda,
                              const double *x,
                              size_t dim,
                              double *out);

/**
 * One META step on λ at `x_next`.
 *
 * # Safety
 * `x_next` must hold `dim` doubles; `outcome` may be null.
 */
enum MtStatus mt_meta_update(struct MtLambda *lambda,
                             const double *x_next,
                             size_t dim,
                             const struct MtMetaInputs *m,
                             enum MtUpdateOutcome *outcome);

/**
 * # Safety
 * `out` must be writable.
 */
enum MtStatus mt_learner_new(enum MtLearnerKind kind, size_t dim, struct MtLearner **out);

/**
 * # Safety
 * `learner` must come from this library and not be used afterwards.
 */
void mt_learner_free(struct MtLearner *learner);

/**
 * Clears traces at an episode boundary.
 *
 * # Safety
 * `learner` must be a live handle.
 */
enum MtStatus mt_learner_reset_episode(struct MtLearner *learner);

/**
 * Advances the learner on one transition; `delta` receives the TD error (may be null).
 *
 * # Safety
 * `tr` must be valid and its feature pointers must hold `tr.dim` doubles.
 */
enum MtStatus mt_learner_step(struct MtLearner *learner,
                              const struct MtTransition *tr,
                              double *delta);

/**
 * wᵀx.
 *
 * # Safety
 * `x` must hold `dim` doubles.
 */
enum MtStatus mt_learner_value(const struct MtLearner *learner,
                               const double *x,
                               size_t dim,
                               double *out);

/**
 * Copies the primary weights into `out`.
 *
 * # Safety
 * `out` must hold `dim` doubles.
 */
enum MtStatus mt_learner_weights(const struct MtLearner *learner, double *out, size_t dim);

/**
 * Runs an experiment config (JSON or TOML text) and returns the per-cell summaries as a JSON
 * array. Release the string with `mt_string_free`.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum MtStatus mt_run_experiment(const char *config, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void mt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METATRACE_H */
