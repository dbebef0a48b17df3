#ifndef COGDEBIAS_H
#define COGDEBIAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CogdebiasStatus {
  CogdebiasStatus_Ok = 0,
  CogdebiasStatus_NullArgument = 1,
  CogdebiasStatus_InvalidUtf8 = 2,
  CogdebiasStatus_InvalidJson = 3,
  CogdebiasStatus_InvalidArgument = 4,
  CogdebiasStatus_BackendError = 5,
  CogdebiasStatus_Panic = 6,
} CogdebiasStatus;

/**
 * Opaque model backend plus the prompt templates used with it.
 */
typedef struct CogdebiasBackend CogdebiasBackend;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on the same thread.
 */
const char *cogdebias_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void cogdebias_string_free(char *s);

/**
 * Creates a rule-scripted mock backend from a script in JSON.
 *
 * # Safety
 * `script_json` must be a valid C string; `out` must be writable.
 */
enum CogdebiasStatus cogdebias_backend_new_mock(const char *script_json,
                                                struct CogdebiasBackend **out);

/**
 * Creates the seeded biased-agent simulator.
 *
 * # Safety
 * `out` must be writable.
 */
enum CogdebiasStatus cogdebias_backend_new_simulator(double p_target_treatment,
                                                     double p_target_control,
                                                     uint64_t seed,
                                                     struct CogdebiasBackend **out);

/**
 * # Safety
 * `backend` must be null or a handle from this library, freed once.
 */
void cogdebias_backend_free(struct CogdebiasBackend *backend);

/**
 * Renders the control prompt of an instance as plain text.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_render_control(const char *instance_json, char **out);

/**
 * Injects comma-separated bias cues (anchoring, bandwagon, loss_aversion)
 * in the given order and returns the treatment prompt document as JSON.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_inject(const char *instance_json, const char *biases, char **out);

/**
 * Cue sentence for one bias type.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_make_cue(const char *bias, const char *instance_json, char **out);

/**
 * Extracts the chosen option label from a raw model answer. `options_json`
 * is an array of `{"label", "text"}` objects. The output is the label, or
 * an empty string when the answer is unparsed.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_parse_decision(const char *raw,
                                              const char *options_json,
                                              char **out);

/**
 * Bias score from target-pick counts: treatment rate minus control rate.
 * `out_exact` (optional) receives the reduced fraction as "p/q".
 *
 * # Safety
 * `out_score` must be writable; `out_exact` may be null.
 */
enum CogdebiasStatus cogdebias_bias_score(uint64_t treatment_hits,
                                          uint64_t treatment_n,
                                          uint64_t control_hits,
                                          uint64_t control_n,
                                          double *out_score,
                                          char **out_exact);

/**
 * Runs the debiasing loop on a prompt (JSON document or rendered text).
 * `variant` is "full", "no_bd" or "no_ba". Returns the trace as JSON.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_run_sacd(const struct CogdebiasBackend *backend,
                                        const char *prompt_text,
                                        uint32_t t_max,
                                        const char *variant,
                                        char **out);

/**
 * Runs one prompting strategy by key (vanilla, cot, sacd, ...) and returns
 * the outcome, transcript included, as JSON.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_run_strategy(const struct CogdebiasBackend *backend,
                                            const char *strategy,
                                            const char *prompt_text,
                                            uint32_t t_max,
                                            char **out);

/**
 * Runs a strategy over a JSONL dataset for comma-separated conditions and
 * returns the experiment result as JSON.
 *
 * # Safety
 * Pointers must be valid; free the output with `cogdebias_string_free`.
 */
enum CogdebiasStatus cogdebias_run_experiment(const struct CogdebiasBackend *backend,
                                              const char *dataset_jsonl,
                                              const char *strategy,
                                              const char *conditions,
                                              uint32_t t_max,
                                              uint32_t workers,
                                              char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COGDEBIAS_H */
