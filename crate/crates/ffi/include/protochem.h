#ifndef PROTOCHEM_H
#define PROTOCHEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum {
  PC_STATUS_OK = 0,
  // A required pointer argument was null.
  PC_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  PC_STATUS_INVALID_UTF8 = 2,
  // A SMILES string could not be parsed.
  PC_STATUS_PARSE_ERROR = 3,
  // An argument was out of range or inconsistent.
  PC_STATUS_INVALID_ARGUMENT = 4,
  // The computation itself failed, e.g. an unscorable gold answer.
  PC_STATUS_COMPUTE_ERROR = 5,
  // An internal panic was caught.
  PC_STATUS_PANIC = 99,
} PcStatus;

// Opaque molecule handle.
typedef struct PcMol PcMol;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call on the same thread.
const char *pc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pc_version(void);

// Parses `smiles` into a new handle written to `*out_mol`.
//
// # Safety
// `smiles` must be a NUL-terminated string; `out_mol` must be writable.
PcStatus pc_mol_parse(const char *smiles, PcMol **out_mol);

// Frees a handle from [`pc_mol_parse`]. Null is ignored.
//
// # Safety
// `mol` must come from [`pc_mol_parse`] and not be freed twice.
void pc_mol_free(PcMol *mol);

// Canonical SMILES of `mol`; stereo marks are kept when `keep_stereo` is
// true. Free the result with [`pc_string_free`].
//
// # Safety
// `mol` must be a live handle; `out_smiles` must be writable.
PcStatus pc_mol_canonical_smiles(const PcMol *mol, bool keep_stereo, char **out_smiles);

// Number of non-hydrogen atoms.
//
// # Safety
// `mol` must be a live handle; `out_count` must be writable.
PcStatus pc_mol_heavy_atom_count(const PcMol *mol, size_t *out_count);

// Tanimoto similarity of Morgan fingerprints (`radius`, `nbits`).
//
// # Safety
// `a` and `b` must be live handles; `out_similarity` must be writable.
PcStatus pc_mol_tanimoto(const PcMol *a,
                         const PcMol *b,
                         uint32_t radius,
                         size_t nbits,
                         double *out_similarity);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void pc_string_free(char *s);

// Scores `answer` against `gold` for a benchmark subtask with the default
// scoring settings, writing the primary score in [0, 1]. Subtasks whose
// gold needs structured metadata (open molecule generation, reagent
// options, per-record yield thresholds) are not reachable through this
// call. A null `answer` counts as an extraction failure.
//
// # Safety
// `task_id` and `gold` must be NUL-terminated strings, `answer` null or
// NUL-terminated; `out_score` must be writable.
PcStatus pc_score_answer(const char *task_id,
                         const char *gold,
                         const char *answer,
                         double *out_score);

// Curriculum sampling weights for `n` tasks with current accuracies
// `accuracies[0..n]` and sharpness `alpha`, written to `out_weights[0..n]`.
//
// # Safety
// `accuracies` must hold `n` readable values and `out_weights` `n`
// writable ones.
PcStatus pc_sampling_weights(const double *accuracies, size_t n, double alpha, double *out_weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTOCHEM_H */
