/* C API for the esr toolkit: semi-supervised tagger-parser training with
 * expected statistic regularization. All functions return esr_status;
 * esr_last_error() holds the message for the last failure on this thread.
 * Strings returned through char** are owned by the caller and must be
 * released with esr_string_free(). */
#ifndef ESR_H
#define ESR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum esr_status {
  ESR_OK = 0,
  ESR_ERR_INVALID_ARGUMENT = 1,
  ESR_ERR_IO = 2,
  ESR_ERR_PARSE = 3,
  ESR_ERR_VALIDATION = 4,
  ESR_ERR_NUMERIC = 5,
  ESR_ERR_INTERNAL = 6
} esr_status;

typedef struct esr_treebank esr_treebank;
typedef struct esr_targets esr_targets;

const char* esr_version(void);
const char* esr_last_error(void);
void esr_string_free(char* s);

/* --- treebanks (CoNLL-U) --- */
esr_status esr_treebank_read(const char* path, int labeled, esr_treebank** out);
esr_status esr_treebank_write(const esr_treebank* tb, const char* path);
esr_status esr_treebank_subsample(const esr_treebank* tb, size_t size,
                                  uint64_t seed, esr_treebank** out);
size_t esr_treebank_sentences(const esr_treebank* tb);
size_t esr_treebank_tokens(const esr_treebank* tb);
void esr_treebank_free(esr_treebank* tb);

/* --- synthetic corpora --- */
esr_status esr_syngen(const char* grammar_path, size_t size, uint64_t seed,
                      esr_treebank** out);
esr_status esr_syngen_analytic(const char* grammar_path, char** report);

/* --- statistic targets --- */
esr_status esr_targets_estimate(const esr_treebank* labeled,
                                const char* families_csv, size_t k, size_t B,
                                uint64_t seed, esr_targets** out);
esr_status esr_targets_universal(const char* forbidden_path, esr_targets** out);
esr_status esr_targets_load(const char* path, esr_targets** out);
esr_status esr_targets_save(const esr_targets* t, const char* path);
size_t esr_targets_entries(const esr_targets* t);
void esr_targets_free(esr_targets* t);

/* --- reports --- */
esr_status esr_inspect_targets(const esr_targets* t, char** report);
esr_status esr_inspect_treebank(const esr_treebank* tb,
                                const char* families_csv, char** report);

/* --- training / evaluation ---
 * config: key=value text file (see README); overrides: additional
 * key=value lines applied on top, may be NULL. */
esr_status esr_train_run(const char* config_path, const char* overrides,
                         char** summary);
esr_status esr_evaluate(const char* checkpoint_path, const char* gold_path,
                        double* pos, double* las, double* avg);

/* kind: "loss-variant" or "aggregation" */
esr_status esr_ablate(const char* kind, const char* config_path,
                      const char* overrides, char** report);

/* full oracle suite; ESR_OK iff every family matches enumeration */
esr_status esr_oracle_check(size_t instances, uint64_t seed, char** report);

#ifdef __cplusplus
}
#endif

#endif /* ESR_H */
