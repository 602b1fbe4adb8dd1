#ifndef CZSIM_H
#define CZSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define CZSIM_OK 0

/**
 * A required pointer argument was null.
 */
#define CZSIM_ERR_NULL 1

/**
 * Invalid input: malformed JSON, non-UTF8 text or parameters that fail
 * validation.
 */
#define CZSIM_ERR_INVALID 2

/**
 * The computation itself failed (no convergence, degenerate labels, ...).
 */
#define CZSIM_ERR_COMPUTE 3

/**
 * A panic was caught at the ABI boundary.
 */
#define CZSIM_ERR_PANIC 4

/**
 * Opaque device-parameter handle.
 */
typedef struct CzDevice CzDevice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string.
 */
const char *czsim_version(void);

/**
 * Copy the most recent error message of this thread into `buf` (truncated to
 * `len - 1` bytes, always NUL-terminated). Returns the full message length in
 * bytes, excluding the terminator. `buf` may be null to query the length.
 */
uintptr_t czsim_last_error_message(char *buf, uintptr_t len);

/**
 * New handle with the built-in default device parameters. Never fails.
 */
struct CzDevice *czsim_device_default(void);

/**
 * New handle from a JSON description; null on failure (see
 * `czsim_last_error_message`).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct CzDevice *czsim_device_from_json(const char *json);

/**
 * Release a handle. Accepts null.
 *
 * # Safety
 * `dev` must be null or a pointer previously returned by a constructor, not
 * yet freed.
 */
void czsim_device_free(struct CzDevice *dev);

/**
 * chi12 (GHz) at the given coupler frequency, written to `out`.
 *
 * # Safety
 * `dev` must be a live handle and `out` a valid pointer.
 */
int czsim_chi12(const struct CzDevice *dev, double coupler_ghz, double *out);

/**
 * Minimum gap between the |101> branch and its neighbours along a half-sine
 * pulse of the given amplitude. Writes the gap (GHz) and the coupler
 * frequency where it occurs.
 *
 * # Safety
 * `dev` must be a live handle; `out_gap_ghz` and `out_at_ghz` must be valid
 * pointers.
 */
int czsim_min_gap(const struct CzDevice *dev,
                  double amplitude_phi0,
                  double *out_gap_ghz,
                  double *out_at_ghz);

/**
 * Calibrate a CZ pulse of the given duration and return the full result as a
 * JSON string through `out_json`.
 *
 * # Safety
 * `dev` must be a live handle and `out_json` a valid pointer; the returned
 * string must be released with `czsim_string_free`.
 */
int czsim_calibrate(const struct CzDevice *dev, double duration_ns, double dt_ns, char **out_json);

/**
 * Release a string returned by this library. Accepts null.
 *
 * # Safety
 * `s` must be null or a string returned through an out-parameter of this
 * library, not yet freed.
 */
void czsim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CZSIM_H */
