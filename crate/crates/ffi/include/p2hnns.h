#ifndef P2HNNS_H
#define P2HNNS_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum P2hStatus {
  P2H_STATUS_OK = 0,
  P2H_STATUS_NULL_POINTER = 1,
  P2H_STATUS_INVALID_ARGUMENT = 2,
  P2H_STATUS_IO = 3,
  P2H_STATUS_MALFORMED = 4,
  P2H_STATUS_DIMENSION_MISMATCH = 5,
  P2H_STATUS_DEGENERATE_QUERY = 6,
  P2H_STATUS_K_OUT_OF_RANGE = 7,
  P2H_STATUS_EMPTY = 8,
  // A Rust panic was caught at the boundary.
  P2H_STATUS_INTERNAL = 9,
} P2hStatus;

typedef enum P2hFormat {
  // Guess from the file extension.
  P2H_FORMAT_AUTO = 0,
  P2H_FORMAT_FVECS = 1,
  P2H_FORMAT_BVECS = 2,
  P2H_FORMAT_CSV = 3,
  P2H_FORMAT_RAW_F32 = 4,
} P2hFormat;

typedef enum P2hTreeKind {
  P2H_TREE_KIND_BALL = 0,
  P2H_TREE_KIND_BC = 1,
} P2hTreeKind;

typedef enum P2hPreference {
  P2H_PREFERENCE_CENTER = 0,
  P2H_PREFERENCE_LOWER_BOUND = 1,
} P2hPreference;

// Opaque tree index. Owns its own copy of the indexed points.
typedef struct P2hIndex P2hIndex;

// Opaque point set.
typedef struct P2hPointSet P2hPointSet;

// Search settings. `budget == 0` means unlimited.
typedef struct P2hSearchOptions {
  uintptr_t k;
  uint64_t budget;
  enum P2hPreference preference;
} P2hSearchOptions;

// Per-query work counters.
typedef struct P2hCounters {
  uint64_t center_ip_count;
  uint64_t candidates_verified;
  uint64_t nodes_visited;
  uint64_t leaves_scanned;
} P2hCounters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call into this library on the same thread.
const char *p2h_last_error(void);

// Copies `n * raw_dim` row-major floats into a new point set.
//
// # Safety
// `rows` must point to `n * raw_dim` readable floats and `out` must be
// writable.
enum P2hStatus p2h_pointset_from_rows(const float *rows,
                                      uintptr_t n,
                                      uintptr_t raw_dim,
                                      struct P2hPointSet **out);

// Reads a point set from disk.
//
// # Safety
// `path` must be a NUL-terminated string and `out` must be writable.
enum P2hStatus p2h_pointset_load(const char *path, enum P2hFormat format, struct P2hPointSet **out);

// Number of points, or 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
uintptr_t p2h_pointset_len(const struct P2hPointSet *set);

// Dimensionality of the input rows, before the appended constant.
//
// # Safety
// `set` must be null or a live handle.
uintptr_t p2h_pointset_dim(const struct P2hPointSet *set);

// # Safety
// `set` must be null or a handle not yet freed.
void p2h_pointset_free(struct P2hPointSet *set);

// Builds a tree over `set`. The index keeps its own copy of the points.
//
// # Safety
// `set` must be a live handle and `out` must be writable.
enum P2hStatus p2h_index_build(const struct P2hPointSet *set,
                               enum P2hTreeKind kind,
                               uintptr_t leaf_size,
                               uint64_t seed,
                               struct P2hIndex **out);

// # Safety
// `index` must be a live handle and `path` a NUL-terminated string.
enum P2hStatus p2h_index_save(const struct P2hIndex *index, const char *path);

// Loads an index file. `set` must be the point set it was built from.
//
// # Safety
// `path` must be a NUL-terminated string, `set` a live handle and `out`
// writable.
enum P2hStatus p2h_index_load(const char *path,
                              const struct P2hPointSet *set,
                              struct P2hIndex **out);

// # Safety
// `index` must be a live handle and `out` writable.
enum P2hStatus p2h_index_kind(const struct P2hIndex *index, enum P2hTreeKind *out);

// Number of indexed points, or 0 for a null handle.
//
// # Safety
// `index` must be null or a live handle.
uintptr_t p2h_index_len(const struct P2hIndex *index);

// Finds the `options.k` points nearest to the hyperplane
// `<w, p> + b = 0`, given as `coeffs = [w..., b]` with
// `coeffs_len = dim + 1`. The normal need not be unit length.
//
// Results are written ascending by distance. `out_ids` and
// `out_distances` need room for `options.k` entries. `counters` may be
// null.
//
// # Safety
// All non-null pointers must be valid for the sizes above.
enum P2hStatus p2h_index_search(const struct P2hIndex *index,
                                const double *coeffs,
                                uintptr_t coeffs_len,
                                struct P2hSearchOptions options,
                                uint32_t *out_ids,
                                double *out_distances,
                                uintptr_t *out_count,
                                struct P2hCounters *counters);

// Exhaustive scan with the same query convention and output layout as
// [`p2h_index_search`].
//
// # Safety
// All pointers must be valid for the sizes described there.
enum P2hStatus p2h_exact_topk(const struct P2hPointSet *set,
                              const double *coeffs,
                              uintptr_t coeffs_len,
                              uintptr_t k,
                              uint32_t *out_ids,
                              double *out_distances,
                              uintptr_t *out_count);

// # Safety
// `index` must be null or a handle not yet freed.
void p2h_index_free(struct P2hIndex *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* P2HNNS_H */
