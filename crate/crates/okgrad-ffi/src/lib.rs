//! C ABI over the okgrad estimators: the minimum-variance unbiased low-rank
//! sampler and its relatives, plus an opaque recurrent-cell handle for
//! forward evaluation from other languages.
//!
//! Conventions: matrices are dense row-major `double` buffers allocated by
//! the caller; every function returns a status code and leaves outputs
//! untouched on failure; `okgrad_last_error_message` describes the most
//! recent failure on the calling thread. Handles are created and released
//! by the paired `_new`/`_free` functions and must not be shared across
//! concurrent calls.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use okgrad::lowrank;
use okgrad::rng::CounterRng;
use okgrad::rnn::{forward, load_checkpoint, save_checkpoint, RhnParams};
use okgrad::smalllin::{svd, Mat};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OkgradStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericFailure = 3,
    IoFailure = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &okgrad::Error) -> OkgradStatus {
    match err {
        okgrad::Error::Io(_) | okgrad::Error::BadCheckpoint(_) => OkgradStatus::IoFailure,
        okgrad::Error::SvdNoConvergence { .. } | okgrad::Error::NonFinite(_) => {
            OkgradStatus::NumericFailure
        }
        _ => OkgradStatus::InvalidArgument,
    }
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn okgrad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn okgrad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guard(body: impl FnOnce() -> OkgradStatus) -> OkgradStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            OkgradStatus::Panic
        }
    }
}

/// Deterministic counter-based random stream.
pub struct OkgradRng(CounterRng);

/// Create a random stream keyed by `(seed, stream)`.
#[no_mangle]
pub extern "C" fn okgrad_rng_new(seed: u64, stream: u64) -> *mut OkgradRng {
    Box::into_raw(Box::new(OkgradRng(CounterRng::new(seed).derive(&[stream]))))
}

/// Release a stream created by [`okgrad_rng_new`].
///
/// # Safety
/// `rng` must be a pointer previously returned by `okgrad_rng_new` and not
/// yet freed; passing NULL is allowed and does nothing.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rng_free(rng: *mut OkgradRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

/// Sample the minimum-variance unbiased rank-`rank` approximation of the
/// `rows x cols` row-major matrix `c`: on success `l_out` (`rows x rank`)
/// and `r_out` (`cols x rank`) hold factors whose product `L R^T` has rank
/// at most `rank` and expectation `c` over the stream's sign draws.
///
/// # Safety
/// `c` must point to `rows * cols` readable doubles; `l_out` and `r_out`
/// must point to `rows * rank` and `cols * rank` writable doubles; `rng`
/// must be a live stream from [`okgrad_rng_new`].
#[no_mangle]
pub unsafe extern "C" fn okgrad_opt(
    c: *const f64,
    rows: usize,
    cols: usize,
    rank: usize,
    rng: *mut OkgradRng,
    l_out: *mut f64,
    r_out: *mut f64,
) -> OkgradStatus {
    let (Some(data), Some(l), Some(r), Some(stream)) = (
        slice_arg(c, rows * cols),
        slice_out(l_out, rows * rank),
        slice_out(r_out, cols * rank),
        rng.as_mut(),
    ) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    guard(|| {
        let mat = match Mat::new(rows, cols, data.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match lowrank::opt(&mat, rank, &mut stream.0) {
            Ok(sample) => {
                l.copy_from_slice(sample.l.data());
                r.copy_from_slice(sample.r_mat.data());
                OkgradStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Deterministic best rank-`rank` approximation (singular value
/// truncation), same buffer contract as [`okgrad_opt`].
///
/// # Safety
/// See [`okgrad_opt`]; no stream is needed.
#[no_mangle]
pub unsafe extern "C" fn okgrad_opt_bias(
    c: *const f64,
    rows: usize,
    cols: usize,
    rank: usize,
    l_out: *mut f64,
    r_out: *mut f64,
) -> OkgradStatus {
    let (Some(data), Some(l), Some(r)) = (
        slice_arg(c, rows * cols),
        slice_out(l_out, rows * rank),
        slice_out(r_out, cols * rank),
    ) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    guard(|| {
        let mat = match Mat::new(rows, cols, data.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match lowrank::opt_bias(&mat, rank) {
            Ok((lm, rm)) => {
                l.copy_from_slice(lm.data());
                r.copy_from_slice(rm.data());
                OkgradStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Split a non-increasing, non-negative diagonal of length `n` for
/// rank-`rank` approximation, reporting the split index `m` (1-based), the
/// number of mixed columns `k`, the suffix sums `s1` and `s2`, and the
/// variance `s1^2 / k - s2` achieved by the optimal sampler.
///
/// # Safety
/// `d` must point to `n` readable doubles; output pointers must each be
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn okgrad_split_index(
    d: *const f64,
    n: usize,
    rank: usize,
    m_out: *mut usize,
    k_out: *mut usize,
    s1_out: *mut f64,
    s2_out: *mut f64,
    variance_bound_out: *mut f64,
) -> OkgradStatus {
    let Some(diag) = slice_arg(d, n) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    if m_out.is_null() || k_out.is_null() || s1_out.is_null() || s2_out.is_null()
        || variance_bound_out.is_null()
    {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    }
    guard(|| match lowrank::split_index(diag, rank) {
        Ok(split) => {
            *m_out = split.m;
            *k_out = split.k;
            *s1_out = split.s1;
            *s2_out = split.s2;
            *variance_bound_out = split.variance_bound;
            OkgradStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Sample the optimal unbiased rank-`rank` approximation of `diag(d)`. The
/// sampled factor (shared by both sides) is written to `l_out`
/// (`n x rank`, row-major).
///
/// # Safety
/// `d` must point to `n` readable doubles, `l_out` to `n * rank` writable
/// doubles, and `rng` must be a live stream.
#[no_mangle]
pub unsafe extern "C" fn okgrad_opt_diag(
    d: *const f64,
    n: usize,
    rank: usize,
    rng: *mut OkgradRng,
    l_out: *mut f64,
) -> OkgradStatus {
    let (Some(diag), Some(l), Some(stream)) =
        (slice_arg(d, n), slice_out(l_out, n * rank), rng.as_mut())
    else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    guard(|| match lowrank::sample_opt_diag(diag, rank, &mut stream.0) {
        Ok(sample) => {
            l.copy_from_slice(sample.l.data());
            OkgradStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Build `z_rows` orthonormal vectors whose summed outer product has the
/// prescribed diagonal `d` (entries in [0, 1] summing to `z_rows`). The
/// vectors are written row-major to `z_out` (`z_rows x n`).
///
/// # Safety
/// `d` must point to `n` readable doubles and `z_out` to `z_rows * n`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn okgrad_idempotent_diagonal(
    d: *const f64,
    n: usize,
    z_rows: usize,
    z_out: *mut f64,
) -> OkgradStatus {
    let (Some(diag), Some(z)) = (slice_arg(d, n), slice_out(z_out, z_rows * n)) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    guard(|| match lowrank::idempotent_with_diagonal(diag) {
        Ok(vectors) => {
            if vectors.len() != z_rows {
                set_error(&format!(
                    "diagonal sums to {} vectors, caller expected {z_rows}",
                    vectors.len()
                ));
                return OkgradStatus::InvalidArgument;
            }
            for (row, v) in vectors.iter().enumerate() {
                z[row * n..(row + 1) * n].copy_from_slice(v);
            }
            OkgradStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Singular value decomposition of a `rows x cols` row-major matrix:
/// writes `u` (`rows x rows`), the `min(rows, cols)` singular values in
/// non-increasing order, and `v` (`cols x cols`), with
/// `a = u diag(d) v^T`.
///
/// # Safety
/// Buffers must be readable/writable at the sizes above.
#[no_mangle]
pub unsafe extern "C" fn okgrad_svd(
    a: *const f64,
    rows: usize,
    cols: usize,
    u_out: *mut f64,
    d_out: *mut f64,
    v_out: *mut f64,
) -> OkgradStatus {
    let (Some(data), Some(u), Some(d), Some(v)) = (
        slice_arg(a, rows * cols),
        slice_out(u_out, rows * rows),
        slice_out(d_out, rows.min(cols)),
        slice_out(v_out, cols * cols),
    ) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    guard(|| {
        let mat = match Mat::new(rows, cols, data.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match svd(&mat) {
            Ok(dec) => {
                u.copy_from_slice(dec.u.data());
                d.copy_from_slice(&dec.d);
                v.copy_from_slice(dec.v.data());
                OkgradStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Opaque recurrent highway cell (parameters plus output head).
pub struct OkgradRhn(RhnParams);

/// Create a freshly initialized cell with one-hot inputs of width `vocab`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_new(
    units: usize,
    vocab: usize,
    seed: u64,
    out: *mut *mut OkgradRhn,
) -> OkgradStatus {
    if out.is_null() {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    }
    if units == 0 || vocab < 2 {
        set_error("need units >= 1 and vocab >= 2");
        return OkgradStatus::InvalidArgument;
    }
    guard(|| {
        let params = RhnParams::glorot(units, vocab, vocab, seed);
        *out = Box::into_raw(Box::new(OkgradRhn(params)));
        OkgradStatus::Ok
    })
}

/// Load a cell from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_load(
    path: *const c_char,
    out: *mut *mut OkgradRhn,
) -> OkgradStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not UTF-8");
        return OkgradStatus::InvalidArgument;
    };
    guard(|| match load_checkpoint(Path::new(path)) {
        Ok((params, _seed)) => {
            *out = Box::into_raw(Box::new(OkgradRhn(params)));
            OkgradStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Save a cell to a checkpoint file.
///
/// # Safety
/// `rhn` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_save(
    rhn: *const OkgradRhn,
    seed: u64,
    path: *const c_char,
) -> OkgradStatus {
    let Some(handle) = rhn.as_ref() else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    if path.is_null() {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not UTF-8");
        return OkgradStatus::InvalidArgument;
    };
    guard(|| match save_checkpoint(&handle.0, seed, Path::new(path)) {
        Ok(()) => OkgradStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Hidden width of the cell.
///
/// # Safety
/// `rhn` must be a live handle (NULL returns 0).
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_units(rhn: *const OkgradRhn) -> usize {
    rhn.as_ref().map_or(0, |h| h.0.n())
}

/// Output vocabulary size.
///
/// # Safety
/// `rhn` must be a live handle (NULL returns 0).
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_vocab(rhn: *const OkgradRhn) -> usize {
    rhn.as_ref().map_or(0, |h| h.0.vocab())
}

/// Advance the cell one step: consumes `h_prev` (length `units`) and the
/// one-hot input id, writes the next hidden state to `h_next_out`.
///
/// # Safety
/// `rhn` must be a live handle; `h_prev` and `h_next_out` must point to
/// `units` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_forward(
    rhn: *const OkgradRhn,
    h_prev: *const f64,
    input_id: usize,
    h_next_out: *mut f64,
) -> OkgradStatus {
    let Some(handle) = rhn.as_ref() else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    let units = handle.0.n();
    let (Some(h), Some(out)) = (slice_arg(h_prev, units), slice_out(h_next_out, units)) else {
        set_error("null pointer");
        return OkgradStatus::NullPointer;
    };
    if input_id >= handle.0.n_in() {
        set_error("input id out of range");
        return OkgradStatus::InvalidArgument;
    }
    guard(|| match forward(&handle.0, h, input_id) {
        Ok(step) => {
            out.copy_from_slice(&step.h_next);
            OkgradStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Release a cell handle.
///
/// # Safety
/// `rhn` must come from `okgrad_rhn_new`/`okgrad_rhn_load` and not yet be
/// freed; NULL is allowed.
#[no_mangle]
pub unsafe extern "C" fn okgrad_rhn_free(rhn: *mut OkgradRhn) {
    if !rhn.is_null() {
        drop(Box::from_raw(rhn));
    }
}
