#ifndef ROSD_H
#define ROSD_H

/* Generated by cbindgen from rosd-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every FFI entry point.
 */
typedef enum RosdStatus {
  ROSD_STATUS_OK = 0,
  ROSD_STATUS_NULL_POINTER = 1,
  ROSD_STATUS_UTF8_ERROR = 2,
  ROSD_STATUS_INVALID_ARGUMENT = 3,
  ROSD_STATUS_CONFIG_ERROR = 4,
  ROSD_STATUS_CONTRACT_VIOLATION = 5,
  ROSD_STATUS_PARSE_ERROR = 6,
  ROSD_STATUS_IO_ERROR = 7,
  ROSD_STATUS_INTERNAL = 8,
} RosdStatus;

/*
 Opaque checkpointed policy model plus its tokenizer.
 */
typedef struct RosdModel RosdModel;

/*
 Opaque set of generated problems.
 */
typedef struct RosdProblemSet RosdProblemSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Borrowed description of the most recent error on this thread. Valid until
 the next failing call; do not free.
 */
const char *rosd_last_error_message(void);

/*
 Frees a string allocated by this library.

 # Safety
 `s` must be a pointer previously returned through a `char**` out-param of
 this library, not yet freed. NULL is ignored.
 */
void rosd_string_free(char *s);

/*
 Generates `n` problems of `family` ("arith_chain" or "string_transform")
 from `seed` into a new handle.

 # Safety
 `family` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum RosdStatus rosd_problems_generate(const char *family,
                                       uint64_t seed,
                                       uintptr_t n,
                                       struct RosdProblemSet **out);

/*
 Parses problems from JSON lines into a new handle.

 # Safety
 `jsonl` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum RosdStatus rosd_problems_from_jsonl(const char *jsonl, struct RosdProblemSet **out);

/*
 Number of problems in the set; 0 for NULL.

 # Safety
 `set` must be a live handle or NULL.
 */
uintptr_t rosd_problems_len(const struct RosdProblemSet *set);

/*
 Serializes the whole set as JSON lines.

 # Safety
 `set` must be a live handle; `out` a valid pointer.
 */
enum RosdStatus rosd_problems_to_jsonl(const struct RosdProblemSet *set, char **out);

/*
 Copies the prompt of problem `idx`.

 # Safety
 `set` must be a live handle; `out` a valid pointer.
 */
enum RosdStatus rosd_problem_prompt(const struct RosdProblemSet *set, uintptr_t idx, char **out);

/*
 Verifies a response against problem `idx`. `reward_out` receives 0 or 1;
 `extracted_out` (optional) receives the extracted answer or NULL.

 # Safety
 `set` must be a live handle; `response` a valid string; `reward_out`
 a valid pointer; `extracted_out` may be NULL.
 */
enum RosdStatus rosd_verify(const struct RosdProblemSet *set,
                            uintptr_t idx,
                            const char *response,
                            int32_t *reward_out,
                            char **extracted_out);

/*
 Frees a problem-set handle. NULL is ignored.

 # Safety
 `set` must be a handle from this library, not yet freed.
 */
void rosd_problems_free(struct RosdProblemSet *set);

/*
 KL(p || q) over two length-`n` probability vectors. Disjoint support
 yields +infinity, not an error.

 # Safety
 `p` and `q` must point to `n` readable doubles; `out` must be valid.
 */
enum RosdStatus rosd_forward_kl(const double *p, const double *q, uintptr_t n, double *out);

/*
 Jensen-Shannon divergence with mixture weight `alpha` in (0,1).

 # Safety
 `p` and `q` must point to `n` readable doubles; `out` must be valid.
 */
enum RosdStatus rosd_jsd(const double *p, const double *q, uintptr_t n, double alpha, double *out);

/*
 Locates an error quote inside a rollout text (tokenized with the default
 task tokenizer). `k_out` receives the token index (0 when unmatched),
 `matched_out` 0/1, and `match_kind_out` 0=none, 1=exact, 2=normalized.

 # Safety
 `quote` and `rollout_text` must be valid strings; out-pointers valid.
 */
enum RosdStatus rosd_locate(const char *quote,
                            const char *rollout_text,
                            uintptr_t *k_out,
                            int32_t *matched_out,
                            int32_t *match_kind_out);

/*
 Loads a model checkpoint written by the trainer.

 # Safety
 `path` must be a valid string; `out` a valid pointer.
 */
enum RosdStatus rosd_model_load(const char *path, struct RosdModel **out);

/*
 Samples one seeded response for a prompt.

 # Safety
 `model` must be a live handle; `prompt` a valid string; `text_out` valid.
 */
enum RosdStatus rosd_model_sample(const struct RosdModel *model,
                                  const char *prompt,
                                  double temperature,
                                  uintptr_t max_new_tokens,
                                  uint64_t seed,
                                  char **text_out);

/*
 mean@k accuracy of the model over a problem set.

 # Safety
 `model` and `set` must be live handles; `out` a valid pointer.
 */
enum RosdStatus rosd_model_evaluate(const struct RosdModel *model,
                                    const struct RosdProblemSet *set,
                                    uintptr_t k,
                                    double temperature,
                                    uintptr_t max_new_tokens,
                                    uint64_t seed,
                                    double *out);

/*
 Frees a model handle. NULL is ignored.

 # Safety
 `model` must be a handle from this library, not yet freed.
 */
void rosd_model_free(struct RosdModel *model);

/*
 Runs a full training experiment from a flat `key = value` config string
 into `out_dir`, returning the summary as JSON.

 # Safety
 `config_kv` and `out_dir` must be valid strings; `summary_json_out` valid.
 */
enum RosdStatus rosd_run_experiment(const char *config_kv,
                                    const char *out_dir,
                                    char **summary_json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROSD_H */
