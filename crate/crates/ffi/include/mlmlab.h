#ifndef MLMLAB_H
#define MLMLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirrored by the CLI's exit codes.
 */
typedef enum MlStatus {
  MlmlabStatusOk = 0,
  MlmlabStatusUsage = 1,
  MlmlabStatusData = 2,
  MlmlabStatusDiverged = 3,
  MlmlabStatusInternal = 4,
} MlStatus;

/**
 * Opaque tokenized two-language corpus.
 */
typedef struct MlCorpus MlCorpus;

/**
 * Opaque encoder checkpoint.
 */
typedef struct MlModel MlModel;

/**
 * Opaque evaluation report.
 */
typedef struct MlReport MlReport;

/**
 * Opaque wordpiece vocabulary (two-language table).
 */
typedef struct MlVocab MlVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string; static, do not free.
 */
const char *mlmlab_version(void);

/**
 * The last error message on this thread, or NULL. Caller frees with
 * `mlmlab_string_free`.
 */
char *mlmlab_last_error(void);

void mlmlab_string_free(char *s);

/**
 * Force single-threaded kernels (non-zero = on) for exact reproducibility.
 */
void mlmlab_set_single_thread(int32_t on);

/**
 * Train a WordPiece vocabulary on a text file and extend it to the
 * two-language table.
 *
 * # Safety
 * `corpus_path` must be a valid C string; `out` must be a valid pointer.
 */
enum MlStatus mlmlab_vocab_train(const char *corpus_path,
                                 uint32_t target_size,
                                 int32_t shift_special,
                                 struct MlVocab **out);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be a valid pointer.
 */
enum MlStatus mlmlab_vocab_load(const char *path, struct MlVocab **out);

/**
 * # Safety
 * `vocab` must be a live handle; `path` a valid C string.
 */
enum MlStatus mlmlab_vocab_save(const struct MlVocab *vocab, const char *path);

/**
 * Total (two-language) vocabulary size; 0 if the handle is NULL.
 */
uint32_t mlmlab_vocab_total_size(const struct MlVocab *vocab);

/**
 * Monolingual vocabulary size (= the fake-language id shift).
 */
uint32_t mlmlab_vocab_mono_size(const struct MlVocab *vocab);

void mlmlab_vocab_free(struct MlVocab *vocab);

/**
 * Tokenize whitespace-separated `text` into `lang` token ids.
 * Writes at most `cap` ids to `out_ids`; `out_len` always receives the
 * full tokenization length (call with cap 0 to query the size).
 *
 * # Safety
 * Pointers must be valid; `out_ids` must hold `cap` u32 slots.
 */
enum MlStatus mlmlab_tokenize(const struct MlVocab *vocab,
                              const char *text,
                              int32_t lang,
                              uint32_t *out_ids,
                              uintptr_t cap,
                              uintptr_t *out_len);

/**
 * Tokenize a text file into the two-language corpus, optionally inverted
 * (fake side reversed) or split into non-parallel halves.
 *
 * # Safety
 * `vocab` must be live; `input_path` a valid C string; `out` valid.
 */
enum MlStatus mlmlab_corpus_prepare(const struct MlVocab *vocab,
                                    const char *input_path,
                                    int32_t invert,
                                    int32_t no_parallel,
                                    struct MlCorpus **out);

/**
 * # Safety
 * `path` must be a valid C string; `out` valid.
 */
enum MlStatus mlmlab_corpus_load(const char *path, struct MlCorpus **out);

/**
 * # Safety
 * `corpus` must be live; `path` a valid C string.
 */
enum MlStatus mlmlab_corpus_save(const struct MlCorpus *corpus, const char *path);

/**
 * Sentence count of one side (lang 0 = base, 1 = fake); 0 on NULL.
 */
uintptr_t mlmlab_corpus_len(const struct MlCorpus *corpus, int32_t lang);

void mlmlab_corpus_free(struct MlCorpus *corpus);

/**
 * # Safety
 * `path` must be a valid C string; `out` valid.
 */
enum MlStatus mlmlab_checkpoint_load(const char *path, struct MlModel **out);

void mlmlab_model_free(struct MlModel *model);

/**
 * Evaluate a checkpoint against a parallel dev corpus.
 *
 * # Safety
 * All handles must be live; `out` valid.
 */
enum MlStatus mlmlab_evaluate(const struct MlModel *model,
                              const struct MlCorpus *dev,
                              const struct MlVocab *vocab,
                              uintptr_t max_pairs,
                              struct MlReport **out);

/**
 * Read one metric field off a report. Field names: mu, f1_0, rho_0, tau_0,
 * f1_8, rho_8, tau_8, train_ppl, dev_ppl.
 *
 * # Safety
 * `report` must be live; `field` a valid C string; `value` valid.
 */
enum MlStatus mlmlab_report_field(const struct MlReport *report, const char *field, double *value);

void mlmlab_report_free(struct MlReport *report);

/**
 * Run a full experiment by ID. `config_path` may be NULL (defaults);
 * `seeds` may be NULL to use the default seed list. On success
 * `out_mean_mu` receives the across-seed mean of the aggregate score.
 *
 * # Safety
 * Strings must be valid C strings or NULL where documented; `seeds` must
 * point to `n_seeds` u64 values when non-NULL.
 */
enum MlStatus mlmlab_run_experiment(const char *id,
                                    const char *config_path,
                                    const char *out_dir,
                                    const uint64_t *seeds,
                                    uintptr_t n_seeds,
                                    double *out_mean_mu);

/**
 * Word-order score of a permutation of 0..len-1 (identity = 1.0).
 *
 * # Safety
 * `perm` must point to `len` u32 values; `out` must be valid.
 */
enum MlStatus mlmlab_kendall_tau(const uint32_t *perm, uintptr_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLMLAB_H */
