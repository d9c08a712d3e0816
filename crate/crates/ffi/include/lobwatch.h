#ifndef LOBWATCH_H
#define LOBWATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Price levels per side in an [`LwSnapshot`].
#define LW_LEVELS 30

// Bytes in one encoded feed record.
#define LW_RECORD_LEN 34

#define LW_KIND_ADD 1

#define LW_KIND_CANCEL 2

#define LW_KIND_DELETE 3

#define LW_KIND_EXECUTE 4

#define LW_SIDE_BID 0

#define LW_SIDE_ASK 1

// Side of non-add events.
#define LW_SIDE_NONE 255

typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_POINTER = 1,
  LW_STATUS_INVALID_ARGUMENT = 2,
  // The book rejected the event; the book is unchanged.
  LW_STATUS_BOOK_REJECTED = 3,
  LW_STATUS_DECODE = 4,
  LW_STATUS_IO = 5,
  LW_STATUS_MODEL = 6,
  LW_STATUS_BUFFER_TOO_SMALL = 7,
  LW_STATUS_PANIC = 8,
} LwStatus;

// Opaque order book.
typedef struct LwBook LwBook;

// Opaque trained model.
typedef struct LwModel LwModel;

// One feed message. `side` and `price` are only read for adds.
typedef struct LwEvent {
  // One of the `LW_KIND_*` values.
  uint8_t kind;
  // One of the `LW_SIDE_*` values.
  uint8_t side;
  uint32_t qty;
  uint32_t instrument_id;
  uint64_t timestamp;
  uint64_t order_id;
  int64_t price;
} LwEvent;

// Top `LW_LEVELS` levels per side, columns `[bid, ask]`; missing levels are zero.
typedef struct LwSnapshot {
  uint64_t timestamp;
  uint64_t qty[LW_LEVELS][2];
  int64_t price[LW_LEVELS][2];
} LwSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread; empty if none. Valid
// until the next failing call on this thread.
const char *lw_last_error(void);

// Library version as a static NUL-terminated string.
const char *lw_version(void);

struct LwBook *lw_book_new(void);

// Releases a book; null is ignored.
//
// # Safety
// `book` must come from [`lw_book_new`] and not be used afterwards.
void lw_book_free(struct LwBook *book);

// Applies one event. A rejected event leaves the book unchanged.
//
// # Safety
// Pointers must be null or valid for the call.
enum LwStatus lw_book_apply(struct LwBook *book, const struct LwEvent *event);

// # Safety
// Pointers must be null or valid for the call.
enum LwStatus lw_book_snapshot(const struct LwBook *book, struct LwSnapshot *out);

// Number of resting orders, or 0 for a null book.
//
// # Safety
// `book` must be null or valid.
size_t lw_book_order_count(const struct LwBook *book);

// Writes the `LW_RECORD_LEN`-byte feed record for `event` into `out`.
//
// # Safety
// `out` must hold `out_len` writable bytes.
enum LwStatus lw_event_encode(const struct LwEvent *event, uint8_t *out, size_t out_len);

// Decodes one feed record of exactly `LW_RECORD_LEN` bytes.
//
// # Safety
// `buf` must hold `len` readable bytes; `out` must be writable.
enum LwStatus lw_event_decode(const uint8_t *buf, size_t len, struct LwEvent *out);

// Loads a checkpoint directory into `*out`.
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be writable.
enum LwStatus lw_model_load(const char *dir, struct LwModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`lw_model_load`] and not be used afterwards.
void lw_model_free(struct LwModel *model);

// Embedding length, or 0 for a null model.
//
// # Safety
// `model` must be null or valid.
size_t lw_model_embed_dim(const struct LwModel *model);

// Number of output classes (2 or 3), or 0 for a null model.
//
// # Safety
// `model` must be null or valid.
size_t lw_model_classes(const struct LwModel *model);

// Frames per window the model was trained on, or 0 for a null model.
//
// # Safety
// `model` must be null or valid.
size_t lw_model_window(const struct LwModel *model);

// Scores one window of `n` consecutive snapshots, oldest first. Writes the
// final-timestep class probabilities to `probs` and the unit-norm embedding
// to `embedding`. For two-class models, class 0 is bid-side and class 1
// ask-side spoofing; for three-class models, classes are neutral, bid, ask.
//
// # Safety
// `frames` must hold `n` snapshots; `probs` and `embedding` must hold
// `probs_len` and `embedding_len` writable doubles.
enum LwStatus lw_model_infer(const struct LwModel *model,
                             const struct LwSnapshot *frames,
                             size_t n,
                             double *probs,
                             size_t probs_len,
                             double *embedding,
                             size_t embedding_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOBWATCH_H */
