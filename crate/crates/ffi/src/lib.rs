//! C ABI over the polynsd core: opaque handles, integer status codes, and a
//! cbindgen-generated header at include/polynsd.h.
//!
//! Conventions: constructors write their result through an out-pointer and
//! return a status; every handle has exactly one matching `_free` function;
//! a non-zero status leaves the out-pointer untouched and stores a message
//! retrievable with `polynsd_last_error`. Handles are not thread-safe; the
//! error message is thread-local.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polynsd::cochain::Cochain;
use polynsd::graph::Graph;
use polynsd::laplacian::{assemble_laplacian, normalize_laplacian, BlockSparseOperator};
use polynsd::sheaf::{MapKind, SheafStructure};
use polynsd::spectral::{cheb_apply, dirichlet_energy, lambda_max, rescale, LambdaMaxStrategy};
use polynsd::synth::{gen_dataset, SyntheticSpec};
use polynsd::Error;

/// Status code returned by every fallible entry point.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolynsdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments were structurally invalid (bad enum value, bad config).
    InvalidArgument = 2,
    /// Operand shapes or parameter counts do not line up.
    ShapeMismatch = 3,
    /// A numeric precondition failed (PSD violation, non-finite value,
    /// lambda_max out of domain).
    NumericError = 4,
    /// Dataset files were missing or malformed.
    DatasetError = 5,
    /// Underlying I/O failure.
    IoError = 6,
    /// A string argument was not valid UTF-8.
    Utf8Error = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn clear_error() {
    LAST_ERROR.with(|e| e.borrow_mut().clear());
}

fn fail(status: PolynsdStatus, message: impl std::fmt::Display) -> PolynsdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.to_string());
    status
}

fn fail_error(err: &Error) -> PolynsdStatus {
    let status = match err {
        Error::SelfLoop { .. }
        | Error::NodeOutOfRange { .. }
        | Error::Config(_)
        | Error::Representability { .. }
        | Error::OutOfMemoryBudget { .. } => PolynsdStatus::InvalidArgument,
        Error::ShapeMismatch { .. } | Error::ParamCount { .. } => PolynsdStatus::ShapeMismatch,
        Error::PsdViolation { .. }
        | Error::OracleCapacity { .. }
        | Error::RescaleDomain { .. }
        | Error::CayleySingular
        | Error::NonFinite { .. } => PolynsdStatus::NumericError,
        Error::Dataset(_) => PolynsdStatus::DatasetError,
        Error::Io(_) => PolynsdStatus::IoError,
    };
    fail(status, err)
}

/// Opaque graph handle.
pub struct PolynsdGraph {
    inner: Graph,
}

/// Opaque sheaf handle (graph + restriction maps + edge weights).
pub struct PolynsdSheaf {
    inner: SheafStructure,
}

/// Opaque block-sparse symmetric operator handle.
pub struct PolynsdOperator {
    inner: BlockSparseOperator,
}

/// Opaque cochain handle (node-major, stalk-coordinate, channel layout).
pub struct PolynsdCochain {
    inner: Cochain,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn polynsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `cap`) and return the full message length in bytes, excluding the NUL.
/// Passing a null `buf` or zero `cap` just queries the length.
///
/// # Safety
/// `buf` must be null or valid for writes of `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn polynsd_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> PolynsdStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    clear_error();
    PolynsdStatus::Ok
}

/// Build an undirected graph from `num_edges` (u, v) pairs laid out as
/// `edges[2*i], edges[2*i+1]`. Self-loops and out-of-range endpoints fail.
///
/// # Safety
/// `edges` must point to `2 * num_edges` readable u32 values (may be null
/// only when `num_edges == 0`); `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_graph_build(
    num_nodes: usize,
    edges: *const u32,
    num_edges: usize,
    out: *mut *mut PolynsdGraph,
) -> PolynsdStatus {
    if out.is_null() || (edges.is_null() && num_edges > 0) {
        return fail(PolynsdStatus::NullPointer, "graph_build: null pointer");
    }
    let pairs: Vec<(usize, usize)> = (0..num_edges)
        .map(|i| unsafe {
            (
                *edges.add(2 * i) as usize,
                *edges.add(2 * i + 1) as usize,
            )
        })
        .collect();
    match Graph::build(num_nodes, &pairs) {
        Ok(g) => unsafe { write_out(out, PolynsdGraph { inner: g }) },
        Err(e) => fail_error(&e),
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle from `polynsd_graph_build`.
#[no_mangle]
pub unsafe extern "C" fn polynsd_graph_num_nodes(graph: *const PolynsdGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    unsafe { (*graph).inner.num_nodes() }
}

/// Edge count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle from `polynsd_graph_build`.
#[no_mangle]
pub unsafe extern "C" fn polynsd_graph_num_edges(graph: *const PolynsdGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    unsafe { (*graph).inner.num_edges() }
}

/// Release a graph handle. Null is a no-op.
///
/// # Safety
/// `graph` must be null or a live handle not freed before; the handle is
/// invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn polynsd_graph_free(graph: *mut PolynsdGraph) {
    if !graph.is_null() {
        drop(unsafe { Box::from_raw(graph) });
    }
}

fn map_kind_from(kind: i32) -> Option<MapKind> {
    match kind {
        0 => Some(MapKind::Diagonal),
        1 => Some(MapKind::Orthogonal),
        2 => Some(MapKind::General),
        _ => None,
    }
}

/// Identity sheaf on `graph` with stalk dimension `d` (all restriction maps
/// identity, unit edge weights).
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_sheaf_identity(
    graph: *const PolynsdGraph,
    d: usize,
    out: *mut *mut PolynsdSheaf,
) -> PolynsdStatus {
    if graph.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "sheaf_identity: null pointer");
    }
    if d == 0 {
        return fail(PolynsdStatus::InvalidArgument, "stalk dimension must be positive");
    }
    let g = unsafe { (*graph).inner.clone() };
    unsafe {
        write_out(
            out,
            PolynsdSheaf {
                inner: SheafStructure::identity(g, d),
            },
        )
    }
}

/// Random sheaf on `graph`: `kind` 0 = diagonal, 1 = orthogonal (Cayley),
/// 2 = general; map parameters drawn uniform in [-scale, scale] from a
/// deterministic stream seeded by `seed`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_sheaf_random(
    graph: *const PolynsdGraph,
    d: usize,
    kind: i32,
    scale: f64,
    seed: u64,
    out: *mut *mut PolynsdSheaf,
) -> PolynsdStatus {
    if graph.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "sheaf_random: null pointer");
    }
    if d == 0 {
        return fail(PolynsdStatus::InvalidArgument, "stalk dimension must be positive");
    }
    let Some(kind) = map_kind_from(kind) else {
        return fail(
            PolynsdStatus::InvalidArgument,
            format!("map kind {kind} is not 0 (diagonal), 1 (orthogonal), or 2 (general)"),
        );
    };
    let g = unsafe { (*graph).inner.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unsafe {
        write_out(
            out,
            PolynsdSheaf {
                inner: SheafStructure::random(g, d, kind, scale, &mut rng),
            },
        )
    }
}

/// Release a sheaf handle. Null is a no-op.
///
/// # Safety
/// `sheaf` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn polynsd_sheaf_free(sheaf: *mut PolynsdSheaf) {
    if !sheaf.is_null() {
        drop(unsafe { Box::from_raw(sheaf) });
    }
}

/// Assemble the sheaf Laplacian L = delta^T delta as a block-sparse
/// operator.
///
/// # Safety
/// `sheaf` must be a live handle; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_assemble(
    sheaf: *const PolynsdSheaf,
    out: *mut *mut PolynsdOperator,
) -> PolynsdStatus {
    if sheaf.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "assemble: null pointer");
    }
    match assemble_laplacian(unsafe { &(*sheaf).inner }) {
        Ok(l) => unsafe { write_out(out, PolynsdOperator { inner: l }) },
        Err(e) => fail_error(&e),
    }
}

/// Degree-normalize: Delta = D^{-1/2} L D^{-1/2} with per-block
/// (D_v + eps I)^{-1/2}.
///
/// # Safety
/// `op` must be a live handle; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_normalize(
    op: *const PolynsdOperator,
    eps: f64,
    out: *mut *mut PolynsdOperator,
) -> PolynsdStatus {
    if op.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "normalize: null pointer");
    }
    match normalize_laplacian(unsafe { &(*op).inner }, eps) {
        Ok(n) => unsafe { write_out(out, PolynsdOperator { inner: n }) },
        Err(e) => fail_error(&e),
    }
}

/// Total operator dimension (num_nodes * stalk_dim), or 0 for null.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn polynsd_operator_dim(op: *const PolynsdOperator) -> usize {
    if op.is_null() {
        return 0;
    }
    unsafe { (*op).inner.dim() }
}

/// Estimate lambda_max: `strategy` 0 = analytic bound 2 (normalized
/// operators), 1 = Gershgorin block bound, 2 = power iteration capped by
/// Gershgorin. Writes the estimate and whether the estimate converged.
///
/// # Safety
/// `op` must be a live handle; `out_value` and `out_converged` must be valid
/// non-null pointers.
#[no_mangle]
pub unsafe extern "C" fn polynsd_lambda_max(
    op: *const PolynsdOperator,
    strategy: i32,
    out_value: *mut f64,
    out_converged: *mut bool,
) -> PolynsdStatus {
    if op.is_null() || out_value.is_null() || out_converged.is_null() {
        return fail(PolynsdStatus::NullPointer, "lambda_max: null pointer");
    }
    let strategy = match strategy {
        0 => LambdaMaxStrategy::AnalyticNormalized,
        1 => LambdaMaxStrategy::Gershgorin,
        2 => LambdaMaxStrategy::power_default(),
        other => {
            return fail(
                PolynsdStatus::InvalidArgument,
                format!("lambda_max strategy {other} is not 0, 1, or 2"),
            );
        }
    };
    let est = lambda_max(unsafe { &(*op).inner }, strategy);
    unsafe {
        *out_value = est.value;
        *out_converged = est.converged;
    }
    clear_error();
    PolynsdStatus::Ok
}

/// Affine spectral rescale: L_tilde = (2 / lambda_max) L - I.
///
/// # Safety
/// `op` must be a live handle; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_rescale(
    op: *const PolynsdOperator,
    lambda: f64,
    out: *mut *mut PolynsdOperator,
) -> PolynsdStatus {
    if op.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "rescale: null pointer");
    }
    match rescale(unsafe { &(*op).inner }, lambda) {
        Ok(r) => unsafe { write_out(out, PolynsdOperator { inner: r }) },
        Err(e) => fail_error(&e),
    }
}

/// Release an operator handle. Null is a no-op.
///
/// # Safety
/// `op` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn polynsd_operator_free(op: *mut PolynsdOperator) {
    if !op.is_null() {
        drop(unsafe { Box::from_raw(op) });
    }
}

/// Create a cochain over `num_nodes` nodes with stalk dimension `d` and
/// `channels` channels from `len = num_nodes * d * channels` values laid out
/// node-major, then coordinate, then channel.
///
/// # Safety
/// `data` must point to `len` readable f64 values; `out` must be a valid
/// non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_cochain_create(
    num_nodes: usize,
    d: usize,
    channels: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PolynsdCochain,
) -> PolynsdStatus {
    if out.is_null() || (data.is_null() && len > 0) {
        return fail(PolynsdStatus::NullPointer, "cochain_create: null pointer");
    }
    let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
    match Cochain::from_vec(num_nodes, d, channels, values) {
        Ok(x) => unsafe { write_out(out, PolynsdCochain { inner: x }) },
        Err(e) => fail_error(&e),
    }
}

/// Number of scalar entries in the cochain, or 0 for null.
///
/// # Safety
/// `x` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn polynsd_cochain_len(x: *const PolynsdCochain) -> usize {
    if x.is_null() {
        return 0;
    }
    unsafe { (*x).inner.as_slice().len() }
}

/// Copy the cochain's entries into `buf`. `cap` must be at least
/// `polynsd_cochain_len(x)`.
///
/// # Safety
/// `x` must be a live handle; `buf` must be valid for writes of `cap` f64
/// values.
#[no_mangle]
pub unsafe extern "C" fn polynsd_cochain_copy_out(
    x: *const PolynsdCochain,
    buf: *mut f64,
    cap: usize,
) -> PolynsdStatus {
    if x.is_null() || buf.is_null() {
        return fail(PolynsdStatus::NullPointer, "cochain_copy_out: null pointer");
    }
    let data = unsafe { (*x).inner.as_slice() };
    if cap < data.len() {
        return fail(
            PolynsdStatus::ShapeMismatch,
            format!("buffer holds {cap} values, cochain has {}", data.len()),
        );
    }
    unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len()) };
    clear_error();
    PolynsdStatus::Ok
}

/// Release a cochain handle. Null is a no-op.
///
/// # Safety
/// `x` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn polynsd_cochain_free(x: *mut PolynsdCochain) {
    if !x.is_null() {
        drop(unsafe { Box::from_raw(x) });
    }
}

/// y = L x through the block-sparse matvec.
///
/// # Safety
/// `op` and `x` must be live handles; `out` must be a valid non-null
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_matvec(
    op: *const PolynsdOperator,
    x: *const PolynsdCochain,
    out: *mut *mut PolynsdCochain,
) -> PolynsdStatus {
    if op.is_null() || x.is_null() || out.is_null() {
        return fail(PolynsdStatus::NullPointer, "matvec: null pointer");
    }
    match unsafe { (*op).inner.matvec(&(*x).inner) } {
        Ok(y) => unsafe { write_out(out, PolynsdCochain { inner: y }) },
        Err(e) => fail_error(&e),
    }
}

/// Apply the degree-(len-1) Chebyshev filter with coefficients `theta` to
/// `x` on an already rescaled operator.
///
/// # Safety
/// `op` and `x` must be live handles; `theta` must point to `len` readable
/// f64 values; `out` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_cheb_apply(
    op: *const PolynsdOperator,
    theta: *const f64,
    len: usize,
    x: *const PolynsdCochain,
    out: *mut *mut PolynsdCochain,
) -> PolynsdStatus {
    if op.is_null() || x.is_null() || out.is_null() || theta.is_null() {
        return fail(PolynsdStatus::NullPointer, "cheb_apply: null pointer");
    }
    if len == 0 {
        return fail(PolynsdStatus::InvalidArgument, "theta must be nonempty");
    }
    let coeffs = unsafe { std::slice::from_raw_parts(theta, len) };
    match cheb_apply(unsafe { &(*op).inner }, coeffs, unsafe { &(*x).inner }) {
        Ok(y) => unsafe { write_out(out, PolynsdCochain { inner: y }) },
        Err(e) => fail_error(&e),
    }
}

/// Per-channel Dirichlet energy x^T L x. `cap` must be at least the number
/// of channels; returns the channel count through `out_len`.
///
/// # Safety
/// `op` and `x` must be live handles; `buf` must be valid for writes of
/// `cap` f64 values; `out_len` must be a valid non-null pointer.
#[no_mangle]
pub unsafe extern "C" fn polynsd_dirichlet_energy(
    op: *const PolynsdOperator,
    x: *const PolynsdCochain,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> PolynsdStatus {
    if op.is_null() || x.is_null() || buf.is_null() || out_len.is_null() {
        return fail(PolynsdStatus::NullPointer, "dirichlet_energy: null pointer");
    }
    let channels = unsafe { (*x).inner.channels() };
    if cap < channels {
        return fail(
            PolynsdStatus::ShapeMismatch,
            format!("buffer holds {cap} values, cochain has {channels} channels"),
        );
    }
    match dirichlet_energy(unsafe { &(*op).inner }, unsafe { &(*x).inner }) {
        Ok(e) => {
            unsafe {
                std::ptr::copy_nonoverlapping(e.as_ptr(), buf, e.len());
                *out_len = e.len();
            }
            clear_error();
            PolynsdStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Generate a synthetic benchmark dataset from a TOML spec string and write
/// the artifact files (edges.tsv, features.csv, labels.txt, splits.json)
/// into `out_dir`.
///
/// # Safety
/// `spec_toml` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn polynsd_synth_gen(
    spec_toml: *const c_char,
    out_dir: *const c_char,
) -> PolynsdStatus {
    if spec_toml.is_null() || out_dir.is_null() {
        return fail(PolynsdStatus::NullPointer, "synth_gen: null pointer");
    }
    let spec_text = match unsafe { CStr::from_ptr(spec_toml) }.to_str() {
        Ok(s) => s,
        Err(_) => return fail(PolynsdStatus::Utf8Error, "spec_toml is not UTF-8"),
    };
    let dir = match unsafe { CStr::from_ptr(out_dir) }.to_str() {
        Ok(s) => s,
        Err(_) => return fail(PolynsdStatus::Utf8Error, "out_dir is not UTF-8"),
    };
    let spec = match SyntheticSpec::from_toml_str(spec_text) {
        Ok(s) => s,
        Err(e) => return fail_error(&e),
    };
    let ds = match gen_dataset(&spec) {
        Ok(d) => d,
        Err(e) => return fail_error(&e),
    };
    match ds.save_to_dir(Path::new(dir)) {
        Ok(_) => {
            clear_error();
            PolynsdStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}
