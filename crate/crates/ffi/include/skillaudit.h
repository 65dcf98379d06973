#ifndef SKILLAUDIT_H
#define SKILLAUDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_ARGUMENT = 3,
  SA_STATUS_CONFIG_ERROR = 4,
  SA_STATUS_SOURCE_NOT_FOUND = 5,
  SA_STATUS_AUDIT_ERROR = 6,
  SA_STATUS_PANIC = 7,
} SaStatus;

// Verdict levels, numbered like the CLI exit codes.
typedef enum SaVerdict {
  SA_VERDICT_APPROVED = 0,
  SA_VERDICT_CONDITIONAL = 2,
  SA_VERDICT_REJECTED = 3,
} SaVerdict;

typedef enum SaFormat {
  SA_FORMAT_JSON = 0,
  SA_FORMAT_TEXT = 1,
} SaFormat;

typedef enum SaDecision {
  SA_DECISION_PASS = 0,
  SA_DECISION_WARN = 1,
  SA_DECISION_BLOCK = 2,
} SaDecision;

typedef enum SaDimensionStatus {
  SA_DIMENSION_STATUS_CLEAN = 0,
  SA_DIMENSION_STATUS_SUSPECTED = 1,
  SA_DIMENSION_STATUS_CONFIRMED = 2,
} SaDimensionStatus;

// Opaque audit engine.
typedef struct SaEngine SaEngine;

// Opaque audit report.
typedef struct SaReport SaReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sa_version(void);

// Message for the last failed call on this thread, or NULL. Valid until
// the next call on the same thread.
const char *sa_last_error_message(void);

// Create an engine from a config file, or with defaults when
// `config_path` is NULL.
//
// # Safety
// `config_path` must be NULL or a valid C string; `out` must be writable.
enum SaStatus sa_engine_new(const char *config_path, struct SaEngine **out);

// # Safety
// `engine` must be NULL or a handle from [`sa_engine_new`] not yet freed.
void sa_engine_free(struct SaEngine *engine);

// Audit one source (directory, archive path or URL).
//
// # Safety
// `engine` must be a live engine, `source` a valid C string and `out`
// writable.
enum SaStatus sa_engine_audit(const struct SaEngine *engine,
                              const char *source,
                              struct SaReport **out);

// # Safety
// `report` must be NULL or a handle from [`sa_engine_audit`] not yet freed.
void sa_report_free(struct SaReport *report);

// # Safety
// `report` must be a live report and `out` writable.
enum SaStatus sa_report_verdict(const struct SaReport *report, enum SaVerdict *out);

// # Safety
// `report` must be a live report and `out` writable.
enum SaStatus sa_report_risk_score(const struct SaReport *report, uint8_t *out);

// Render a report; free the result with [`sa_string_free`].
//
// # Safety
// `report` must be a live report and `out` writable.
enum SaStatus sa_report_render(const struct SaReport *report, enum SaFormat format, char **out);

// # Safety
// `s` must be NULL or a string returned by this library not yet freed.
void sa_string_free(char *s);

// Aggregate gate decisions (BLOCK dominates WARN dominates PASS). An empty
// vector is an error.
//
// # Safety
// `decisions` must point to `len` readable values and `out` be writable.
enum SaStatus sa_aggregate_decisions(const uint32_t *decisions, size_t len, enum SaDecision *out);

// Risk score (0 to 6) of a scorecard given as three dimension statuses
// (0 Clean, 1 Suspected, 2 Confirmed).
//
// # Safety
// `out` must be writable.
enum SaStatus sa_risk_score(uint32_t malicious,
                            uint32_t semantic,
                            uint32_t composition,
                            uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKILLAUDIT_H */
