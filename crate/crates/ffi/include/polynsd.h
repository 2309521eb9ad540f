#ifndef POLYNSD_H
#define POLYNSD_H

/* Generated by cbindgen from polynsd-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
enum PolynsdStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  PolynsdStatus_Ok = 0,
  // A required pointer argument was null.
  PolynsdStatus_NullPointer = 1,
  // Arguments were structurally invalid (bad enum value, bad config).
  PolynsdStatus_InvalidArgument = 2,
  // Operand shapes or parameter counts do not line up.
  PolynsdStatus_ShapeMismatch = 3,
  // A numeric precondition failed (PSD violation, non-finite value,
  // lambda_max out of domain).
  PolynsdStatus_NumericError = 4,
  // Dataset files were missing or malformed.
  PolynsdStatus_DatasetError = 5,
  // Underlying I/O failure.
  PolynsdStatus_IoError = 6,
  // A string argument was not valid UTF-8.
  PolynsdStatus_Utf8Error = 7,
};
#ifndef __cplusplus
typedef int32_t PolynsdStatus;
#endif // __cplusplus

// Opaque cochain handle (node-major, stalk-coordinate, channel layout).
typedef struct PolynsdCochain PolynsdCochain;

// Opaque graph handle.
typedef struct PolynsdGraph PolynsdGraph;

// Opaque block-sparse symmetric operator handle.
typedef struct PolynsdOperator PolynsdOperator;

// Opaque sheaf handle (graph + restriction maps + edge weights).
typedef struct PolynsdSheaf PolynsdSheaf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *polynsd_version(void);

// Copy the last error message into `buf` (NUL-terminated, truncated to
// `cap`) and return the full message length in bytes, excluding the NUL.
// Passing a null `buf` or zero `cap` just queries the length.
//
// # Safety
// `buf` must be null or valid for writes of `cap` bytes.
uintptr_t polynsd_last_error(char *buf, uintptr_t cap);

// Build an undirected graph from `num_edges` (u, v) pairs laid out as
// `edges[2*i], edges[2*i+1]`. Self-loops and out-of-range endpoints fail.
//
// # Safety
// `edges` must point to `2 * num_edges` readable u32 values (may be null
// only when `num_edges == 0`); `out` must be a valid non-null pointer.
PolynsdStatus polynsd_graph_build(uintptr_t num_nodes,
                                  const uint32_t *edges,
                                  uintptr_t num_edges,
                                  struct PolynsdGraph **out);

// Node count, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle from `polynsd_graph_build`.
uintptr_t polynsd_graph_num_nodes(const struct PolynsdGraph *graph);

// Edge count, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle from `polynsd_graph_build`.
uintptr_t polynsd_graph_num_edges(const struct PolynsdGraph *graph);

// Release a graph handle. Null is a no-op.
//
// # Safety
// `graph` must be null or a live handle not freed before; the handle is
// invalid afterwards.
void polynsd_graph_free(struct PolynsdGraph *graph);

// Identity sheaf on `graph` with stalk dimension `d` (all restriction maps
// identity, unit edge weights).
//
// # Safety
// `graph` must be a live handle; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_sheaf_identity(const struct PolynsdGraph *graph,
                                     uintptr_t d,
                                     struct PolynsdSheaf **out);

// Random sheaf on `graph`: `kind` 0 = diagonal, 1 = orthogonal (Cayley),
// 2 = general; map parameters drawn uniform in [-scale, scale] from a
// deterministic stream seeded by `seed`.
//
// # Safety
// `graph` must be a live handle; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_sheaf_random(const struct PolynsdGraph *graph,
                                   uintptr_t d,
                                   int32_t kind,
                                   double scale,
                                   uint64_t seed,
                                   struct PolynsdSheaf **out);

// Release a sheaf handle. Null is a no-op.
//
// # Safety
// `sheaf` must be null or a live handle not freed before.
void polynsd_sheaf_free(struct PolynsdSheaf *sheaf);

// Assemble the sheaf Laplacian L = delta^T delta as a block-sparse
// operator.
//
// # Safety
// `sheaf` must be a live handle; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_assemble(const struct PolynsdSheaf *sheaf, struct PolynsdOperator **out);

// Degree-normalize: Delta = D^{-1/2} L D^{-1/2} with per-block
// (D_v + eps I)^{-1/2}.
//
// # Safety
// `op` must be a live handle; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_normalize(const struct PolynsdOperator *op,
                                double eps,
                                struct PolynsdOperator **out);

// Total operator dimension (num_nodes * stalk_dim), or 0 for null.
//
// # Safety
// `op` must be null or a live handle.
uintptr_t polynsd_operator_dim(const struct PolynsdOperator *op);

// Estimate lambda_max: `strategy` 0 = analytic bound 2 (normalized
// operators), 1 = Gershgorin block bound, 2 = power iteration capped by
// Gershgorin. Writes the estimate and whether the estimate converged.
//
// # Safety
// `op` must be a live handle; `out_value` and `out_converged` must be valid
// non-null pointers.
PolynsdStatus polynsd_lambda_max(const struct PolynsdOperator *op,
                                 int32_t strategy,
                                 double *out_value,
                                 bool *out_converged);

// Affine spectral rescale: L_tilde = (2 / lambda_max) L - I.
//
// # Safety
// `op` must be a live handle; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_rescale(const struct PolynsdOperator *op,
                              double lambda,
                              struct PolynsdOperator **out);

// Release an operator handle. Null is a no-op.
//
// # Safety
// `op` must be null or a live handle not freed before.
void polynsd_operator_free(struct PolynsdOperator *op);

// Create a cochain over `num_nodes` nodes with stalk dimension `d` and
// `channels` channels from `len = num_nodes * d * channels` values laid out
// node-major, then coordinate, then channel.
//
// # Safety
// `data` must point to `len` readable f64 values; `out` must be a valid
// non-null pointer.
PolynsdStatus polynsd_cochain_create(uintptr_t num_nodes,
                                     uintptr_t d,
                                     uintptr_t channels,
                                     const double *data,
                                     uintptr_t len,
                                     struct PolynsdCochain **out);

// Number of scalar entries in the cochain, or 0 for null.
//
// # Safety
// `x` must be null or a live handle.
uintptr_t polynsd_cochain_len(const struct PolynsdCochain *x);

// Copy the cochain's entries into `buf`. `cap` must be at least
// `polynsd_cochain_len(x)`.
//
// # Safety
// `x` must be a live handle; `buf` must be valid for writes of `cap` f64
// values.
PolynsdStatus polynsd_cochain_copy_out(const struct PolynsdCochain *x, double *buf, uintptr_t cap);

// Release a cochain handle. Null is a no-op.
//
// # Safety
// `x` must be null or a live handle not freed before.
void polynsd_cochain_free(struct PolynsdCochain *x);

// y = L x through the block-sparse matvec.
//
// # Safety
// `op` and `x` must be live handles; `out` must be a valid non-null
// pointer.
PolynsdStatus polynsd_matvec(const struct PolynsdOperator *op,
                             const struct PolynsdCochain *x,
                             struct PolynsdCochain **out);

// Apply the degree-(len-1) Chebyshev filter with coefficients `theta` to
// `x` on an already rescaled operator.
//
// # Safety
// `op` and `x` must be live handles; `theta` must point to `len` readable
// f64 values; `out` must be a valid non-null pointer.
PolynsdStatus polynsd_cheb_apply(const struct PolynsdOperator *op,
                                 const double *theta,
                                 uintptr_t len,
                                 const struct PolynsdCochain *x,
                                 struct PolynsdCochain **out);

// Per-channel Dirichlet energy x^T L x. `cap` must be at least the number
// of channels; returns the channel count through `out_len`.
//
// # Safety
// `op` and `x` must be live handles; `buf` must be valid for writes of
// `cap` f64 values; `out_len` must be a valid non-null pointer.
PolynsdStatus polynsd_dirichlet_energy(const struct PolynsdOperator *op,
                                       const struct PolynsdCochain *x,
                                       double *buf,
                                       uintptr_t cap,
                                       uintptr_t *out_len);

// Generate a synthetic benchmark dataset from a TOML spec string and write
// the artifact files (edges.tsv, features.csv, labels.txt, splits.json)
// into `out_dir`.
//
// # Safety
// `spec_toml` and `out_dir` must be NUL-terminated strings.
PolynsdStatus polynsd_synth_gen(const char *spec_toml, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYNSD_H */
