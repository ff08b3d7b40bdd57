#ifndef RECIPEGEN_H
#define RECIPEGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Ingredients beyond this many are ignored, as in the training pipeline.
 */
#define RG_MAX_INGREDIENTS 5

/**
 * Result of every fallible call.
 */
typedef enum RgStatus {
  RG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RG_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RG_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was out of range or inconsistent with the model.
   */
  RG_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A file could not be read or is not a valid checkpoint.
   */
  RG_STATUS_IO = 4,
  /**
   * The model failed while scoring or decoding.
   */
  RG_STATUS_MODEL = 5,
  /**
   * An internal panic was caught.
   */
  RG_STATUS_PANIC = 6,
} RgStatus;

/**
 * A loaded checkpoint: model weights, tokenizer and vocabularies.
 */
typedef struct RgModel RgModel;

/**
 * Conditioning input for one recipe.
 *
 * `techniques`/`technique_weights` describe the user's technique
 * preferences and are only accepted by `prior_tech` models; pass
 * `n_techniques = 0` for a user without history. Unknown technique names
 * are ignored.
 */
typedef struct RgRecipeInput {
  /**
   * Recipe name, UTF-8.
   */
  const char *name;
  /**
   * `n_ingredients` UTF-8 ingredient names; at least one is required.
   */
  const char *const *ingredients;
  size_t n_ingredients;
  /**
   * 0 = low, 1 = medium, 2 = high.
   */
  uint32_t calorie_level;
  const char *const *techniques;
  const double *technique_weights;
  size_t n_techniques;
} RgRecipeInput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint written by `recipegen train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RgStatus rg_model_load(const char *path, struct RgModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`rg_model_load`] and not be used afterwards.
 */
void rg_model_free(struct RgModel *model);

/**
 * Writes the model variant name (`enc_dec`, `prior_tech`, `prior_recipe`
 * or `prior_name`) as a newly allocated string.
 *
 * # Safety
 * `model` must be a live model and `out` a valid pointer.
 */
enum RgStatus rg_model_variant(const struct RgModel *model, char **out);

/**
 * Writes the size of the model's output vocabulary.
 *
 * # Safety
 * `model` must be a live model and `out` a valid pointer.
 */
enum RgStatus rg_model_vocab_size(const struct RgModel *model, size_t *out);

/**
 * Samples recipe instructions with top-`k` sampling (`k = 1` is greedy),
 * emitting at most `max_len` tokens. The same `seed` reproduces the same
 * text. The result is a newly allocated string.
 *
 * # Safety
 * `model` must be a live model, `input` valid as described on
 * [`RgRecipeInput`], and `out` a valid pointer.
 */
enum RgStatus rg_generate(const struct RgModel *model,
                          const struct RgRecipeInput *input,
                          uint32_t k,
                          uint32_t max_len,
                          uint64_t seed,
                          char **out);

/**
 * Writes the teacher-forced log-likelihood (natural log) of `text` as the
 * recipe's instructions, end-of-sequence included, and the number of
 * predicted tokens when `n_tokens` is not null.
 *
 * # Safety
 * `model` must be a live model, `input` valid as described on
 * [`RgRecipeInput`], `text` a NUL-terminated string, `out` a valid pointer
 * and `n_tokens` null or valid.
 */
enum RgStatus rg_log_likelihood(const struct RgModel *model,
                                const struct RgRecipeInput *input,
                                const char *text,
                                double *out,
                                size_t *n_tokens);

/**
 * BLEU-`n` (1 ≤ n ≤ 4) of `candidate` against `reference` on lowercase
 * word tokens, in [0, 100].
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` a valid pointer.
 */
enum RgStatus rg_bleu(const char *candidate, const char *reference, uint32_t n, double *out);

/**
 * ROUGE-L F-measure of `candidate` against `reference` on lowercase word
 * tokens, in [0, 100].
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` a valid pointer.
 */
enum RgStatus rg_rouge_l(const char *candidate, const char *reference, double *out);

/**
 * Message of the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread and
 * must not be freed.
 */
const char *rg_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void rg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECIPEGEN_H */
