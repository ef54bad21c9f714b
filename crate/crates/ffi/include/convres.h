#ifndef CONVRES_H
#define CONVRES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConvresStatus {
  CONVRES_STATUS_OK = 0,
  CONVRES_STATUS_NULL_ARGUMENT = 1,
  CONVRES_STATUS_INVALID_INPUT = 2,
  CONVRES_STATUS_IO = 3,
  CONVRES_STATUS_INCOMPATIBLE = 4,
  CONVRES_STATUS_CONFIG = 5,
  CONVRES_STATUS_NUMERICAL = 6,
  /*
   A panic was caught at the boundary.
   */
  CONVRES_STATUS_INTERNAL = 7,
} ConvresStatus;

/*
 Passage index.
 */
typedef struct ConvresIndex ConvresIndex;

/*
 Trained term classifier.
 */
typedef struct ConvresModel ConvresModel;

/*
 Ranked passages for one query.
 */
typedef struct ConvresRanking ConvresRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *convres_last_error(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void convres_string_free(char *s);

/*
 Builds an index from a `id<TAB>text` passage file.

 # Safety
 `corpus_tsv` must be a NUL-terminated string; `out` a valid pointer.
 */
enum ConvresStatus convres_index_build(const char *corpus_tsv, struct ConvresIndex **out);

/*
 Loads an index directory written by [`convres_index_save`] or the CLI.

 # Safety
 `dir` must be a NUL-terminated string; `out` a valid pointer.
 */
enum ConvresStatus convres_index_load(const char *dir, struct ConvresIndex **out);

/*
 # Safety
 `index` must be a live handle; `dir` a NUL-terminated string.
 */
enum ConvresStatus convres_index_save(const struct ConvresIndex *index, const char *dir);

/*
 Number of indexed passages; 0 for NULL.

 # Safety
 `index` must be NULL or a live handle.
 */
size_t convres_index_num_passages(const struct ConvresIndex *index);

/*
 # Safety
 `index` must be NULL or a handle not yet freed.
 */
void convres_index_free(struct ConvresIndex *index);

/*
 Query-likelihood search for a plain-text query.

 # Safety
 `index` must be a live handle, the strings NUL-terminated and `out` valid.
 */
enum ConvresStatus convres_search(const struct ConvresIndex *index,
                                  const char *query_id,
                                  const char *query_text,
                                  size_t depth,
                                  double mu,
                                  struct ConvresRanking **out);

/*
 Search with a weighted query given as a JSON object `{"term": weight}`
 over normalized terms, as produced by [`convres_model_resolve`].

 # Safety
 As for [`convres_search`].
 */
enum ConvresStatus convres_search_weighted(const struct ConvresIndex *index,
                                           const char *query_id,
                                           const char *query_json,
                                           size_t depth,
                                           double mu,
                                           struct ConvresRanking **out);

/*
 Number of entries; 0 for NULL.

 # Safety
 `ranking` must be NULL or a live handle.
 */
size_t convres_ranking_len(const struct ConvresRanking *ranking);

/*
 Passage id at `rank` (0-based), or NULL when out of range. Borrowed from
 the ranking; valid until it is freed.

 # Safety
 `ranking` must be NULL or a live handle.
 */
const char *convres_ranking_passage_id(const struct ConvresRanking *ranking, size_t rank);

/*
 Score at `rank` (0-based); NaN when out of range.

 # Safety
 `ranking` must be NULL or a live handle.
 */
double convres_ranking_score(const struct ConvresRanking *ranking, size_t rank);

/*
 # Safety
 `ranking` must be NULL or a handle not yet freed.
 */
void convres_ranking_free(struct ConvresRanking *ranking);

/*
 Reciprocal rank fusion of `count` rankings; the first fixes the
 candidate set.

 # Safety
 `rankings` must point to `count` live handles; `out` must be valid.
 */
enum ConvresStatus convres_rrf_fuse(const struct ConvresRanking *const *rankings,
                                    size_t count,
                                    double k,
                                    struct ConvresRanking **out);

/*
 Loads a classifier checkpoint.

 # Safety
 `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum ConvresStatus convres_model_load(const char *path, struct ConvresModel **out);

/*
 # Safety
 `model` must be NULL or a handle not yet freed.
 */
void convres_model_free(struct ConvresModel *model);

/*
 Resolves turn `turn` of a topic given as one JSON line
 (`{"topic_id": .., "turns": [{"turn": 1, "query": ..}, ..]}`).
 Writes `{"terms": [..], "query": {"term": weight, ..}}` to `out_json`.

 # Safety
 `model` must be a live handle, `topic_json` NUL-terminated and
 `out_json` valid.
 */
enum ConvresStatus convres_model_resolve(const struct ConvresModel *model,
                                         const char *topic_json,
                                         uint32_t turn,
                                         double threshold,
                                         char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVRES_H */
