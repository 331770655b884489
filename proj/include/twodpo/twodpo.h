#ifndef TWODPO_TWODPO_H
#define TWODPO_TWODPO_H

#include <stddef.h>

#if defined(TWODPO_BUILDING_LIBRARY)
#define TDPO_API __attribute__((visibility("default")))
#else
#define TDPO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tdpo_status {
  TDPO_OK = 0,
  TDPO_E_INVALID_ARGUMENT,
  TDPO_E_IO,
  TDPO_E_MALFORMED_RECORD,
  TDPO_E_SCHEMA_VIOLATION,
  TDPO_E_INVARIANT_VIOLATION,
  TDPO_E_EMPTY_DATASET,
  TDPO_E_EMPTY_TEXT,
  TDPO_E_ALIGNMENT_MISMATCH,
  TDPO_E_MISSING_TEMPLATE,
  TDPO_E_PARSE_FAILURE,
  TDPO_E_COUNT_MISMATCH,
  TDPO_E_SCALE_VIOLATION,
  TDPO_E_JUDGE_UNAVAILABLE,
  TDPO_E_EXHAUSTED_RETRIES,
  TDPO_E_WRONG_VOTER_COUNT,
  TDPO_E_OUT_OF_RANGE,
  TDPO_E_DIMENSION_MISMATCH,
  TDPO_E_EMPTY_RESPONSE,
  TDPO_E_ZERO_MEAN_REWARD,
  TDPO_E_SPAN_REWARD_MISMATCH,
  TDPO_E_EMPTY_SELECTION,
  TDPO_E_UNKNOWN_TOKEN,
  TDPO_E_EMPTY_CORPUS,
  TDPO_E_SHAPE_MISMATCH,
  TDPO_E_CONFIG,
  TDPO_E_DATA,
  TDPO_E_NON_FINITE_LOSS,
  TDPO_E_EMPTY_BATCH,
  TDPO_E_SCORER_FAILURE,
  TDPO_E_DEGENERATE_ROUND,
  TDPO_E_INTERNAL
} tdpo_status;

typedef struct tdpo_dataset tdpo_dataset;
typedef struct tdpo_policy tdpo_policy;

/* Called with one metrics CSV row (no newline) per logged step. */
typedef void (*tdpo_metrics_fn)(const char* csv_row, void* user);

/* Message of the last failure on this thread; empty after success. */
TDPO_API const char* tdpo_last_error(void);
TDPO_API const char* tdpo_status_name(tdpo_status status);
/* Releases strings returned through char** out-parameters. */
TDPO_API void tdpo_free_string(char* s);

/* JSON array of {"text", "sep"} segments. */
TDPO_API tdpo_status tdpo_segment_text(const char* text, char** out_json);

TDPO_API tdpo_status tdpo_dataset_load(const char* path, tdpo_dataset** out);
TDPO_API void tdpo_dataset_free(tdpo_dataset* ds);
TDPO_API size_t tdpo_dataset_size(const tdpo_dataset* ds);
TDPO_API tdpo_status tdpo_dataset_save(const tdpo_dataset* ds, const char* path);
/* format: "csv" or "json" */
TDPO_API tdpo_status tdpo_dataset_stats(const tdpo_dataset* ds, const char* format, char** out);

/* Per-record validation of a JSONL file without stopping at the first bad
   record. out_json is an array of {"line", "id", "accepted", "violations"}. */
TDPO_API tdpo_status tdpo_validate_file(const char* path, char** out_json, size_t* rejected);

/* Annotates every unscored record of in_path. judge_json selects the client:
   {"kind": "mock"|"http", "seed", "endpoint", "model", "timeout_ms",
    "max_in_flight", "retry_budget", "api_key_env", "templates_dir",
    "repair_completeness"}. transcript_path may be NULL. */
TDPO_API tdpo_status tdpo_annotate_file(const char* in_path, const char* out_path, const char* transcript_path,
                                        const char* judge_json, size_t* annotated);

/* Parses, validates and fills defaults into a training config. */
TDPO_API tdpo_status tdpo_config_resolve(const char* config_json, char** out_json);

/* Builds a vocabulary from the config's data file and runs supervised
   fine-tuning on the chosen responses. summary_json may be NULL. */
TDPO_API tdpo_status tdpo_sft(const char* config_json, tdpo_policy** out, char** summary_json);

/* Checkpoint at path, vocabulary at path + ".vocab". */
TDPO_API tdpo_status tdpo_policy_load(const char* path, tdpo_policy** out);
TDPO_API tdpo_status tdpo_policy_save(const tdpo_policy* policy, const char* path);
TDPO_API void tdpo_policy_free(tdpo_policy* policy);
TDPO_API size_t tdpo_policy_vocab_size(const tdpo_policy* policy);
TDPO_API tdpo_status tdpo_policy_sample(const tdpo_policy* policy, const char* prompt, double temperature,
                                        double top_p, size_t max_tokens, unsigned long long seed, char** out);

/* Preference optimization on the config's data, starting at init against the
   frozen ref. on_record may be NULL. summary_json may be NULL. */
TDPO_API tdpo_status tdpo_train(const char* config_json, const tdpo_policy* init, const tdpo_policy* ref,
                                tdpo_metrics_fn on_record, void* user, tdpo_policy** out, char** summary_json);

/* Evaluation report over the config's eval_data (data when empty). */
TDPO_API tdpo_status tdpo_evaluate(const char* config_json, const tdpo_policy* theta, const tdpo_policy* ref,
                                   char** out_json);

/* `rounds` iterative rounds with the built-in scripted scorer. Each round's
   pairs are written to <out_dir>/round<k>.jsonl. instructions_path is JSONL of
   {"history": [...]}; when NULL the distinct histories of the config's data
   are used. */
TDPO_API tdpo_status tdpo_iterate(const char* config_json, const tdpo_policy* init, const tdpo_policy* ref,
                                  const char* instructions_path, tdpo_metrics_fn on_record, void* user,
                                  tdpo_policy** out, char** summary_json);

/* Numeric primitives on caller-owned buffers. */
TDPO_API tdpo_status tdpo_dpo_loss(const double* chosen, size_t n_chosen, const double* rejected,
                                   size_t n_rejected, double beta, double* loss, double* grad_chosen,
                                   double* grad_rejected);
/* matrix is segments x 5 raw Likert scores, row-major. */
TDPO_API tdpo_status tdpo_representative_score(const int* matrix, size_t segments, const double* weights,
                                               double* out);
/* Writes min(n_chosen, n_rejected) index pairs. */
TDPO_API tdpo_status tdpo_select_segments(const double* chosen, size_t n_chosen, const double* rejected,
                                          size_t n_rejected, size_t* chosen_idx, size_t* rejected_idx,
                                          size_t* n_pairs);

#ifdef __cplusplus
}
#endif

#endif
