/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef MOLSAE_H
#define MOLSAE_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum MolsaeStatus {
  MOLSAE_STATUS_OK = 0,
  MOLSAE_STATUS_NULL_POINTER = 1,
  MOLSAE_STATUS_INVALID_ARGUMENT = 2,
  MOLSAE_STATUS_IO = 3,
  MOLSAE_STATUS_FORMAT = 4,
  MOLSAE_STATUS_SHAPE = 5,
  MOLSAE_STATUS_BRIDGE = 6,
  MOLSAE_STATUS_BUFFER_TOO_SMALL = 7,
  MOLSAE_STATUS_PANIC = 8,
} MolsaeStatus;

/**
 * A loaded autoencoder checkpoint.
 */
typedef struct MolsaeSae MolsaeSae;

/**
 * An embedding shard held in memory.
 */
typedef struct MolsaeShard MolsaeShard;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *molsae_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *molsae_last_error(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MolsaeStatus molsae_sae_load(const char *path, struct MolsaeSae **out);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `sae` must come from [`molsae_sae_load`] and not be used afterwards.
 */
void molsae_sae_free(struct MolsaeSae *sae);

/**
 * # Safety
 * `sae` must be a live handle; the out pointers must be writable.
 */
enum MolsaeStatus molsae_sae_dims(const struct MolsaeSae *sae,
                                  size_t *d_model,
                                  size_t *dict_size,
                                  size_t *k);

/**
 * Encodes one raw embedding of `d_model` values. Writes up to `capacity`
 * active features in increasing index order and their count to `*out_len`.
 * If `capacity` is below the model's `k`, returns `BUFFER_TOO_SMALL` with the
 * required capacity in `*out_len`.
 *
 * # Safety
 * `x` must hold `d_model` floats; `indices` and `values` must hold `capacity` elements.
 */
enum MolsaeStatus molsae_sae_encode(const struct MolsaeSae *sae,
                                    const float *x,
                                    size_t d_model,
                                    uint32_t *indices,
                                    float *values,
                                    size_t capacity,
                                    size_t *out_len);

/**
 * Decodes a sparse code back to the raw embedding scale.
 *
 * # Safety
 * `indices` and `values` must hold `len` elements; `out` must hold `d_model` floats.
 */
enum MolsaeStatus molsae_sae_decode(const struct MolsaeSae *sae,
                                    const uint32_t *indices,
                                    const float *values,
                                    size_t len,
                                    float *out,
                                    size_t d_model);

/**
 * Decodes the code with `feature` set to zero. A feature absent from the
 * code gives the plain decode.
 *
 * # Safety
 * Same contract as [`molsae_sae_decode`].
 */
enum MolsaeStatus molsae_sae_ablate(const struct MolsaeSae *sae,
                                    const uint32_t *indices,
                                    const float *values,
                                    size_t len,
                                    uint32_t feature,
                                    float *out,
                                    size_t d_model);

/**
 * Reads an embedding shard (without its manifest) into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MolsaeStatus molsae_shard_open(const char *path, struct MolsaeShard **out);

/**
 * Releases a shard handle. NULL is ignored.
 *
 * # Safety
 * `shard` must come from [`molsae_shard_open`] and not be used afterwards.
 */
void molsae_shard_free(struct MolsaeShard *shard);

/**
 * # Safety
 * `shard` must be a live handle; the out pointers must be writable.
 */
enum MolsaeStatus molsae_shard_dims(const struct MolsaeShard *shard,
                                    size_t *count,
                                    size_t *d_model);

/**
 * Copies row `row` into `out`.
 *
 * # Safety
 * `out` must hold `d_model` floats.
 */
enum MolsaeStatus molsae_shard_row(const struct MolsaeShard *shard,
                                   size_t row,
                                   float *out,
                                   size_t d_model);

/**
 * Tanimoto similarity of two fingerprints given as set-bit indices
 * (any order, duplicates allowed) over `nbits` bits.
 *
 * # Safety
 * `a` and `b` must hold `a_len` and `b_len` elements; `out` must be writable.
 */
enum MolsaeStatus molsae_tanimoto(const uint32_t *a,
                                  size_t a_len,
                                  const uint32_t *b,
                                  size_t b_len,
                                  uint32_t nbits,
                                  double *out);

/**
 * Edit distance between two UTF-8 strings, counted in Unicode scalar values.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated; `out` must be writable.
 */
enum MolsaeStatus molsae_levenshtein(const char *a, const char *b, size_t *out);

/**
 * Number of null pairs for margin `epsilon` at critical value `z`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MolsaeStatus molsae_required_sample_size(double z,
                                              double sigma,
                                              double epsilon,
                                              uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOLSAE_H */
