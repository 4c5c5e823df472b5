#ifndef SALEM_H
#define SALEM_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SalemStatus {
  SALEM_STATUS_OK = 0,
  SALEM_STATUS_NULL_POINTER = 1,
  SALEM_STATUS_INVALID_ARGUMENT = 2,
  SALEM_STATUS_SINGULAR_CHANNEL = 3,
  SALEM_STATUS_EMPTY_SUBSET = 4,
  SALEM_STATUS_INTERNAL = 5,
  SALEM_STATUS_PANIC = 6,
} SalemStatus;

/**
 * What happens to the rejected subset in `salem_steane_cg_lambda`.
 */
typedef enum SalemAction {
  SALEM_ACTION_REJECT = 0,
  SALEM_ACTION_INVERT = 1,
} SalemAction;

/**
 * Characterized Steane cycle. Opaque to C.
 */
typedef struct SalemSteane SalemSteane;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated, truncated to
 * `len`). Returns the full message length without the terminator, 0 if there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t salem_last_error(char *buf, size_t len);

/**
 * Enumerate fault paths of one flagged Steane cycle at physical rate `eps` and build the
 * joint record/output table with input errors up to `max_weight - 1`.
 *
 * # Safety
 * `out` must be a valid pointer. The handle is released with `salem_steane_free`.
 */
enum SalemStatus salem_steane_new(double eps, uint32_t max_weight, struct SalemSteane **out);

/**
 * # Safety
 * `h` must come from `salem_steane_new` and not be used afterwards. Null is ignored.
 */
void salem_steane_free(struct SalemSteane *h);

/**
 * Logical error rate per cycle under the lookup-table decoder.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum SalemStatus salem_steane_eps_l(const struct SalemSteane *h, double *out);

/**
 * Probability mass of records outside the table.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum SalemStatus salem_steane_missing(const struct SalemSteane *h, double *out);

/**
 * Fine-grained blowup rate; the missing mass is one extra record with flip rate
 * `eps_missing`.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum SalemStatus salem_steane_fg_lambda(const struct SalemSteane *h,
                                        double eps_missing,
                                        double *out);

/**
 * Blowup rate of inverting the syndrome-averaged channel.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum SalemStatus salem_steane_ext_lambda(const struct SalemSteane *h, double *out);

/**
 * Coarse-grained blowup rate with records of conditional error rate above `tau` rejected
 * or separately inverted. `p_accept` may be null.
 *
 * # Safety
 * `h` and `out` must be valid pointers; `p_accept` must be valid or null.
 */
enum SalemStatus salem_steane_cg_lambda(const struct SalemSteane *h,
                                        double tau,
                                        enum SalemAction action,
                                        double *out,
                                        double *p_accept);

/**
 * Leading-order ratio of mid-shot to post-shot rejection rates at `u >= 0`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SalemStatus salem_midshot_ratio(double u, double *out);

/**
 * Invert a single-qubit Pauli channel given as probabilities in I, X, Y, Z order.
 * Writes the quasi-probabilities of the inverse to `quasi[4]` and its norm to `norm`.
 *
 * # Safety
 * `probs` must point to 4 readable doubles, `quasi` to 4 writable doubles, `norm` must
 * be valid.
 */
enum SalemStatus salem_invert_logical(const double *probs, double *quasi, double *norm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SALEM_H */
