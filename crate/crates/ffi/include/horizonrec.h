#ifndef HORIZONREC_H
#define HORIZONREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which held-out event to evaluate.
typedef enum HrSplit {
  HR_SPLIT_VALIDATION = 0,
  HR_SPLIT_TEST = 1,
} HrSplit;

// Result codes of every fallible call.
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  HR_STATUS_NULL_POINTER = 1,
  HR_STATUS_INVALID_ARGUMENT = 2,
  HR_STATUS_IO = 3,
  HR_STATUS_FORMAT = 4,
  HR_STATUS_CHECKPOINT = 5,
  HR_STATUS_NON_FINITE = 6,
  HR_STATUS_BUFFER_TOO_SMALL = 7,
  HR_STATUS_NOT_FOUND = 8,
  HR_STATUS_PANIC = 9,
} HrStatus;

// A loaded retrieval database.
typedef struct HrDatabase HrDatabase;

// A loaded dataset directory.
typedef struct HrDataset HrDataset;

// A trained model, with its retrieval database when the variant needs one.
typedef struct HrModel HrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hr_version(void);

// Copies the calling thread's last error message into `buf` (truncated
// and always NUL-terminated when `len > 0`). Returns the length needed to
// hold the whole message including the terminator.
//
// # Safety
// `buf` must be NULL or point to at least `len` writable bytes.
size_t hr_last_error_message(char *buf, size_t len);

// Opens a dataset directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum HrStatus hr_dataset_open(const char *dir, struct HrDataset **out);

// Releases a dataset handle (NULL is ignored).
//
// # Safety
// `ds` must be NULL or a handle from [`hr_dataset_open`] not yet freed.
void hr_dataset_free(struct HrDataset *ds);

// Number of users in the dataset.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
enum HrStatus hr_dataset_users(const struct HrDataset *ds, size_t *out);

// Copies the external id of target item `index` (1-based) into `buf`.
// `needed` receives the length including the terminator; when it exceeds
// `len` nothing is written and `BufferTooSmall` is returned.
//
// # Safety
// `ds` must be a live handle; `buf` must hold `len` bytes; `needed` must
// be writable.
enum HrStatus hr_dataset_target_item(const struct HrDataset *ds,
                                     size_t index,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

// Opens a retrieval database file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HrStatus hr_db_open(const char *path, struct HrDatabase **out);

// Releases a database handle (NULL is ignored).
//
// # Safety
// `db` must be NULL or a handle from [`hr_db_open`] not yet freed.
void hr_db_free(struct HrDatabase *db);

// Number of segments in the database.
//
// # Safety
// `db` must be a live handle; `out` must be writable.
enum HrStatus hr_db_rows(const struct HrDatabase *db, size_t *out);

// Embedding width of the database.
//
// # Safety
// `db` must be a live handle; `out` must be writable.
enum HrStatus hr_db_dim(const struct HrDatabase *db, size_t *out);

// Cosine top-`k` rows for `query` (width `dim`), best first. Writes up
// to `k` row indices to `rows` and their number to `count`.
//
// # Safety
// `query` must point to `dim` doubles, `rows` to `k` writable `size_t`s,
// and `count` must be writable.
enum HrStatus hr_db_topk(const struct HrDatabase *db,
                         const double *query,
                         size_t dim,
                         size_t k,
                         size_t *rows,
                         size_t *count);

// Loads a trained model checkpoint. `db_path` may be NULL for variants
// that do not retrieve noise; otherwise it names the database to use.
//
// # Safety
// `ckpt` must be a NUL-terminated string, `db_path` NULL or one, and
// `out` writable.
enum HrStatus hr_model_load(const char *ckpt, const char *db_path, struct HrModel **out);

// Releases a model handle (NULL is ignored).
//
// # Safety
// `model` must be NULL or a handle from [`hr_model_load`] not yet freed.
void hr_model_free(struct HrModel *model);

// HR@k and NDCG@k of `model` on one held-out split of `ds`.
//
// # Safety
// Handles must be live; `hr` and `ndcg` must be writable.
enum HrStatus hr_model_evaluate(const struct HrModel *model,
                                const struct HrDataset *ds,
                                enum HrSplit split,
                                size_t k,
                                double *hr,
                                double *ndcg);

// Top-`k` target items (1-based vocabulary indices, best first) to follow
// the complete history of `user_id`.
//
// # Safety
// Handles must be live, `user_id` NUL-terminated, `items` must hold `k`
// writable `size_t`s and `count` must be writable.
enum HrStatus hr_model_recommend(const struct HrModel *model,
                                 const struct HrDataset *ds,
                                 const char *user_id,
                                 size_t k,
                                 size_t *items,
                                 size_t *count);

// Writes `ᾱ_1..ᾱ_T` of the linear schedule into `out` (`steps` doubles).
//
// # Safety
// `out` must point to `steps` writable doubles.
enum HrStatus hr_schedule_alpha_bar(size_t steps, double beta_start, double beta_end, double *out);

// Position weight of item `j` in a segment spanning `k..=l`.
//
// # Safety
// `out` must be writable.
enum HrStatus hr_lowpass_weight(size_t j, size_t l, size_t k, double c, double n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HORIZONREC_H */
