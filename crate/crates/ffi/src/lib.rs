//! C ABI over the bitscale library.
//!
//! Matrices and Hessians cross the boundary as opaque handles. Every
//! fallible call returns a [`BsStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`bs_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bitscale::ptq::{self, GptqConfig, HessianEstimate};
use bitscale::quant::{self, Granularity, QuantSpec};
use bitscale::{distill, scaling, Error, Matrix};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NotPositiveDefinite = 4,
    NoValidFit = 5,
    Panic = 6,
    Other = 7,
}

/// Opaque row-major f64 matrix.
pub struct BsMatrix(Matrix);

/// Opaque damped Hessian estimate.
pub struct BsHessian(HessianEstimate);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BsPowerLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rmse: f64,
}

/// Quantization granularity tag for [`bs_fake_quantize`].
pub const BS_PER_TENSOR: u32 = 0;
pub const BS_PER_ROW: u32 = 1;
pub const BS_GROUP: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BsStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidConfig { .. } | Error::NonPositiveScale { .. } => {
            BsStatus::InvalidArgument
        }
        Error::Shape(_) | Error::LengthMismatch { .. } | Error::IndexOutOfRange { .. } => BsStatus::Shape,
        Error::NotPositiveDefinite { .. } => BsStatus::NotPositiveDefinite,
        Error::NoValidFit | Error::InsufficientPoints { .. } => BsStatus::NoValidFit,
        _ => BsStatus::Other,
    }
}

fn fail(status: BsStatus, msg: impl Into<String>) -> BsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), BsStatus>) -> BsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(BsStatus::Panic, "panic inside bitscale"),
    }
}

fn lib(e: Error) -> BsStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

fn granularity(kind: u32, group: usize) -> Result<Granularity, BsStatus> {
    match kind {
        BS_PER_TENSOR => Ok(Granularity::PerTensor),
        BS_PER_ROW => Ok(Granularity::PerRow),
        BS_GROUP => Ok(Granularity::Group(group)),
        k => Err(fail(BsStatus::InvalidArgument, format!("unknown granularity {k}"))),
    }
}

unsafe fn matrix_ref<'a>(m: *const BsMatrix) -> Result<&'a Matrix, BsStatus> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| fail(BsStatus::NullPointer, "null matrix handle"))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, BsStatus> {
    p.as_mut().ok_or_else(|| fail(BsStatus::NullPointer, "null output pointer"))
}

fn boxed(m: Matrix) -> *mut BsMatrix {
    Box::into_raw(Box::new(BsMatrix(m)))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next bitscale call on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `rows*cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows*cols` readable doubles and `out` must be
/// writable. Free the result with [`bs_matrix_free`].
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_new(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut BsMatrix,
) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(fail(BsStatus::NullPointer, "null data pointer"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| fail(BsStatus::Shape, "rows*cols overflows"))?;
        let values = slice::from_raw_parts(data, n).to_vec();
        *out = boxed(Matrix::from_vec(rows, cols, values).map_err(lib)?);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_free(m: *mut BsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_rows(m: *const BsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_cols(m: *const BsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major values into `dst`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle and `dst` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_copy_data(m: *const BsMatrix, dst: *mut f64, len: usize) -> BsStatus {
    guard(|| {
        let m = matrix_ref(m)?;
        if dst.is_null() {
            return Err(fail(BsStatus::NullPointer, "null destination"));
        }
        let src = m.data();
        if len != src.len() {
            return Err(fail(BsStatus::Shape, format!("destination holds {len} values, matrix has {}", src.len())));
        }
        slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
        Ok(())
    })
}

/// Integer fake quantization calibrated on `x` itself with range
/// shrink factors `gamma` and `beta`.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_fake_quantize(
    x: *const BsMatrix,
    bits: u32,
    granularity_kind: u32,
    group_size: usize,
    gamma: f64,
    beta: f64,
    out: *mut *mut BsMatrix,
) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let x = matrix_ref(x)?;
        let spec = QuantSpec::int(bits, granularity(granularity_kind, group_size)?).map_err(lib)?;
        *out = boxed(quant::fake_quant_self(x, &spec, gamma, beta).map_err(lib)?);
        Ok(())
    })
}

/// Rounds `x/scale` onto the ExMy float grid and rescales.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_fp_quantize(
    x: *const BsMatrix,
    exp_bits: u32,
    man_bits: u32,
    scale: f64,
    out: *mut *mut BsMatrix,
) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let x = matrix_ref(x)?;
        *out = boxed(quant::fp_quantize(x, exp_bits, man_bits, scale).map_err(lib)?);
        Ok(())
    })
}

/// Hessian `2XᵀX/n` of calibration inputs with relative diagonal damping.
///
/// # Safety
/// `calib` must be a live handle and `out` writable. Free the result with
/// [`bs_hessian_free`].
#[no_mangle]
pub unsafe extern "C" fn bs_hessian_new(calib: *const BsMatrix, damping: f64, out: *mut *mut BsHessian) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let x = matrix_ref(calib)?;
        let h = ptq::estimate_hessian(x, damping).map_err(lib)?;
        *out = Box::into_raw(Box::new(BsHessian(h)));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_hessian_free(h: *mut BsHessian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// GPTQ with per-row integer grids. Writes the quantized weights to `out`
/// and, when `proxy_loss` is non-null, the Hessian-weighted error.
///
/// # Safety
/// Handles must be live; `out` must be writable; `proxy_loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn bs_gptq(
    w: *const BsMatrix,
    h: *const BsHessian,
    bits: u32,
    block_size: usize,
    act_order: bool,
    out: *mut *mut BsMatrix,
    proxy_loss: *mut f64,
) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let w = matrix_ref(w)?;
        let h = &h.as_ref().ok_or_else(|| fail(BsStatus::NullPointer, "null hessian handle"))?.0;
        let mut cfg = GptqConfig::new(QuantSpec::weights(bits).map_err(lib)?, block_size);
        cfg.act_order = act_order;
        let r = ptq::gptq(w, h, &cfg).map_err(lib)?;
        if let Some(p) = proxy_loss.as_mut() {
            *p = r.proxy_loss;
        }
        *out = boxed(r.weights);
        Ok(())
    })
}

/// Top-k KL divergence between two probability vectors of length `len`.
///
/// # Safety
/// `p_teacher` and `p_student` must hold `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_topkld(
    p_teacher: *const f64,
    p_student: *const f64,
    len: usize,
    k: usize,
    out: *mut f64,
) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if p_teacher.is_null() || p_student.is_null() {
            return Err(fail(BsStatus::NullPointer, "null distribution"));
        }
        if k == 0 || k > len {
            return Err(fail(BsStatus::InvalidArgument, format!("k must be in 1..={len}, got {k}")));
        }
        let (t, s) = (slice::from_raw_parts(p_teacher, len), slice::from_raw_parts(p_student, len));
        *out = distill::topkld_probs(t, s, k);
        Ok(())
    })
}

/// Fits `y = a·x^(−b) + c` to `n` points.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_fit_power_law(x: *const f64, y: *const f64, n: usize, out: *mut BsPowerLaw) -> BsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if x.is_null() || y.is_null() {
            return Err(fail(BsStatus::NullPointer, "null point array"));
        }
        let pts: Vec<(f64, f64)> = slice::from_raw_parts(x, n).iter().copied().zip(slice::from_raw_parts(y, n).iter().copied()).collect();
        let f = scaling::fit_power_law(&pts).map_err(lib)?;
        *out = BsPowerLaw { a: f.a, b: f.b, c: f.c, rmse: f.rmse };
        Ok(())
    })
}
