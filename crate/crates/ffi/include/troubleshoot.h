#ifndef TROUBLESHOOT_H
#define TROUBLESHOOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdint.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_ARGUMENT = 1,
  TS_STATUS_INVALID_UTF8 = 2,
  TS_STATUS_INVALID_ARGUMENT = 3,
  TS_STATUS_INVALID_REQUEST = 4,
  TS_STATUS_UNKNOWN_LABEL = 5,
  TS_STATUS_UNKNOWN_ENVIRONMENT = 6,
  TS_STATUS_NOT_FOUND = 7,
  TS_STATUS_PARSE_ERROR = 8,
  TS_STATUS_UNSUPPORTED_VERSION = 9,
  TS_STATUS_IO_ERROR = 10,
  TS_STATUS_TRANSPORT_ERROR = 11,
  TS_STATUS_INTERNAL_ERROR = 12,
  TS_STATUS_PANIC = 13,
} TsStatus;

// A loaded model, optionally with its training corpus.
typedef struct TsEngine TsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a model artifact. `corpus_path` may be null; when given, exemplar
// retrieval and `record_id` recourse become available.
//
// # Safety
// Path arguments must be null or NUL-terminated; `out` must be writable.
enum TsStatus ts_engine_open(const char *model_path,
                             const char *corpus_path,
                             struct TsEngine **out);

// # Safety
// `engine` must come from `ts_engine_open` and not be used afterwards.
void ts_engine_free(struct TsEngine *engine);

// Schema version, domain sizes, environments and fit metadata.
//
// # Safety
// `engine` must be a live handle; `out_json` must be writable.
enum TsStatus ts_model_info_json(const struct TsEngine *engine, char **out_json);

// `{text, top_k?}` to ranked causes.
//
// # Safety
// As for `ts_model_info_json`; `request_json` must be NUL-terminated.
enum TsStatus ts_diagnose_json(const struct TsEngine *engine,
                               const char *request_json,
                               char **out_json);

// `{text, top_k?, generate?, k_retrieve?}` to causes plus solutions.
//
// # Safety
// As for `ts_diagnose_json`.
enum TsStatus ts_solve_json(const struct TsEngine *engine,
                            const char *request_json,
                            char **out_json);

// `{text, target_env | z_marginal, top_k?}` to transported solutions.
//
// # Safety
// As for `ts_diagnose_json`.
enum TsStatus ts_transport_json(const struct TsEngine *engine,
                                const char *request_json,
                                char **out_json);

// `{factual | record_id, alt_text, mode?, samples?, seed?}`; `default_seed`
// applies when the request has no seed.
//
// # Safety
// As for `ts_diagnose_json`.
enum TsStatus ts_recourse_json(const struct TsEngine *engine,
                               const char *request_json,
                               uint64_t default_seed,
                               char **out_json);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void ts_string_free(char *s);

// Message for the most recent failure on this thread; empty after success.
const char *ts_last_error(void);

// Library version, static storage.
const char *ts_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TROUBLESHOOT_H */
