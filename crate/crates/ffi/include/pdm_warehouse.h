/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef PDM_WAREHOUSE_H
#define PDM_WAREHOUSE_H

#include <stdbool.h>
#include <stdint.h>
#include <stddef.h>

/**
 * Length of the digest written by [`pdm_warehouse_state_hash`].
 */
#define PDM_STATE_HASH_LEN 32

typedef enum {
  PDM_STATUS_OK = 0,
  PDM_STATUS_NULL_ARGUMENT = 1,
  PDM_STATUS_INVALID_UTF8 = 2,
  PDM_STATUS_INVALID_ARGUMENT = 3,
  PDM_STATUS_NOT_FOUND = 4,
  PDM_STATUS_CONSTRAINT = 5,
  PDM_STATUS_IO = 6,
  PDM_STATUS_CORRUPT = 7,
  PDM_STATUS_LOCKED = 8,
  PDM_STATUS_OCCUPIED = 9,
  PDM_STATUS_READ_ONLY = 10,
  PDM_STATUS_AUTH_FAILED = 11,
  PDM_STATUS_SESSION_INVALID = 12,
  PDM_STATUS_PERMISSION_DENIED = 13,
  PDM_STATUS_LOAD_ABORTED = 14,
  PDM_STATUS_PANIC = 15,
} PdmStatus;

typedef enum {
  PDM_ACK_STATUS_STORED = 0,
  PDM_ACK_STATUS_REJECTED_EMPTY = 1,
  PDM_ACK_STATUS_REJECTED_TOKEN_TAKEN = 2,
} PdmAckStatus;

/**
 * An open warehouse directory plus the sessions opened through it.
 */
typedef struct PdmWarehouse PdmWarehouse;

/**
 * Acknowledgement for one submitted instruction. A stored ack's id equals
 * the input id; rejected acks carry 0 in both.
 */
typedef struct {
  uint64_t ack_id;
  uint64_t input_id;
  PdmAckStatus status;
  int64_t ts;
} PdmAck;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *pdm_version(void);

/**
 * Message for the calling thread's most recent failure, or null. Valid
 * until the next failing call on the same thread.
 */
const char *pdm_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pdm_string_free(char *s);

/**
 * Initializes an empty warehouse in `dir` (absent or empty) and opens it.
 *
 * # Safety
 * `dir` must be a valid C string; `out` must be writable.
 */
PdmStatus pdm_warehouse_create(const char *dir, PdmWarehouse **out);

/**
 * Opens an existing warehouse. Read-only handles take no writer lock and
 * refuse every mutating call with `READ_ONLY`.
 *
 * # Safety
 * `dir` must be a valid C string; `out` must be writable.
 */
PdmStatus pdm_warehouse_open(const char *dir, bool read_only, PdmWarehouse **out);

/**
 * Closes a handle and releases its lock. Null is ignored.
 *
 * # Safety
 * `h` must come from `pdm_warehouse_create` or `pdm_warehouse_open` and
 * not have been closed.
 */
void pdm_warehouse_close(PdmWarehouse *h);

/**
 * Writes a fresh snapshot and truncates the journal.
 *
 * # Safety
 * `h` must be a live handle.
 */
PdmStatus pdm_warehouse_checkpoint(PdmWarehouse *h);

/**
 * Row count of a relation given by its snake_case name.
 *
 * # Safety
 * `h` must be a live handle, `relation` a valid C string, `out` writable.
 */
PdmStatus pdm_warehouse_count(PdmWarehouse *h, const char *relation, uint64_t *out);

/**
 * SHA-256 of the canonical snapshot encoding, `PDM_STATE_HASH_LEN` bytes.
 *
 * # Safety
 * `h` must be a live handle; `out` must have room for 32 bytes.
 */
PdmStatus pdm_warehouse_state_hash(PdmWarehouse *h, uint8_t *out);

/**
 * Checks a password and opens a session on this handle. Unknown users and
 * wrong passwords fail identically with `AUTH_FAILED`.
 *
 * # Safety
 * `h` must be a live handle, strings valid, `out_session` writable.
 */
PdmStatus pdm_authenticate(PdmWarehouse *h,
                           const char *username,
                           const char *password,
                           int64_t now,
                           char **out_session);

/**
 * Stores an instruction for the session's login. `token` may be null; a
 * token seen before returns the original ack without writing.
 *
 * # Safety
 * `h` must be a live handle, strings valid (`token` may be null), `out`
 * writable.
 */
PdmStatus pdm_submit(PdmWarehouse *h,
                     const char *session,
                     const char *instruction,
                     const char *token,
                     int64_t now,
                     PdmAck *out);

/**
 * The input a stored ack refers to, as a JSON object.
 *
 * # Safety
 * `h` must be a live handle; `out_json` writable.
 */
PdmStatus pdm_resolve(PdmWarehouse *h, uint64_t ack_id, char **out_json);

/**
 * Records an output against an input. The stored time is never earlier
 * than the input's.
 *
 * # Safety
 * `h` must be a live handle, strings valid, `out_id` writable or null.
 */
PdmStatus pdm_record_output(PdmWarehouse *h,
                            const char *session,
                            uint64_t input_id,
                            const char *payload,
                            int64_t now,
                            uint64_t *out_id);

/**
 * The session login's inputs newest first with their outputs, as JSON.
 *
 * # Safety
 * `h` must be a live handle, `session` valid, `out_json` writable.
 */
PdmStatus pdm_history_json(PdmWarehouse *h,
                           const char *session,
                           uint64_t limit,
                           int64_t now,
                           char **out_json);

/**
 * Renders `projects` or `aggregates` as a JSON array. Needs
 * `read_project`.
 *
 * # Safety
 * `h` must be a live handle, strings valid, `out_json` writable.
 */
PdmStatus pdm_report_json(PdmWarehouse *h,
                          const char *session,
                          const char *report,
                          int64_t now,
                          char **out_json);

/**
 * Runs the load pipeline over the enabled sources of a config file and
 * commits. Needs `run_etl`. Watermarks and quarantined rows are kept in the
 * warehouse directory, as the command-line tool does. `out_json` receives
 * one object per source. Returns `LOAD_ABORTED` if any source failed; the
 * report is still written.
 *
 * # Safety
 * `h` must be a live handle, strings valid, `out_json` writable.
 */
PdmStatus pdm_etl_run(PdmWarehouse *h,
                      const char *session,
                      const char *config_path,
                      bool full,
                      int64_t now,
                      char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDM_WAREHOUSE_H */
