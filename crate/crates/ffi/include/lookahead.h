#ifndef LOOKAHEAD_H
#define LOOKAHEAD_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LaStatus {
  LA_STATUS_OK = 0,
  LA_STATUS_NULL_POINTER = 1,
  LA_STATUS_INVALID_UTF8 = 2,
  LA_STATUS_IO = 3,
  LA_STATUS_CHECKPOINT = 4,
  LA_STATUS_INVALID_INPUT = 5,
  LA_STATUS_BUFFER_TOO_SMALL = 6,
  LA_STATUS_INTERNAL = 7,
} LaStatus;

/**
 * Opaque loaded router.
 */
typedef struct LaRouter LaRouter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *la_last_error(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum LaStatus la_router_load(const char *path, struct LaRouter **out);

/**
 * Number of candidate models.
 *
 * # Safety
 * `router` must come from [`la_router_load`]; `out` must be valid.
 */
enum LaStatus la_router_models(const struct LaRouter *router, size_t *out);

/**
 * Routes `query`. Writes the 1-based selected model to `*selected` and,
 * when `scores` is non-null, the per-model scores to `scores[0..len]`.
 *
 * # Safety
 * `router` must come from [`la_router_load`]; `query` must be
 * nul-terminated; `scores` must hold `len` doubles when non-null.
 */
enum LaStatus la_router_route(const struct LaRouter *router,
                              const char *query,
                              double *scores,
                              size_t len,
                              size_t *selected);

/**
 * Releases a router; null is ignored.
 *
 * # Safety
 * `router` must come from [`la_router_load`] and not be used afterwards.
 */
void la_router_free(struct LaRouter *router);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOOKAHEAD_H */
