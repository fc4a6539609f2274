//! C interface to `grm`.
//!
//! Every function returns a [`GrmStatus`]; on failure the message is kept per
//! thread and can be read with [`grm_last_error`]. Models are opaque handles
//! released with [`grm_model_free`]; strings returned by the library are
//! released with [`grm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use grm::gibbs::{gibbs_sample, GibbsConfig};
use grm::logpartition::{log_partition, PartitionOptions, PrecisionPolicy};
use grm::model::Normalizability;
use grm::solver::{fit, FitConfig, Symmetrize};
use grm::{io, Family, GrmError, GrmModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    InfeasibleNaturalParam = 4,
    Precision = 5,
    Normalization = 6,
    LineSearch = 7,
    Parse = 8,
    Version = 9,
    Io = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrmFamily {
    Poisson = 0,
    Exponential = 1,
}

impl From<GrmFamily> for Family {
    fn from(f: GrmFamily) -> Self {
        match f {
            GrmFamily::Poisson => Family::Poisson,
            GrmFamily::Exponential => Family::Exponential,
        }
    }
}

/// Fitting options; start from [`grm_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GrmFitOptions {
    pub lambda: f64,
    pub nq: u32,
    pub newton_max: u32,
    pub simplified: bool,
    pub stagewise: bool,
    /// 0 averages the node estimates, 1 keeps the one closest to zero.
    pub symmetrize: u32,
    pub seed: u64,
}

/// Opaque model handle.
pub struct GrmModelHandle(GrmModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &GrmError) -> GrmStatus {
    match e {
        GrmError::InfeasibleNaturalParam(_) => GrmStatus::InfeasibleNaturalParam,
        GrmError::Domain(_) => GrmStatus::Domain,
        GrmError::Precision { .. } => GrmStatus::Precision,
        GrmError::Normalization(_) | GrmError::NonConstantConcavity { .. } => GrmStatus::Normalization,
        GrmError::LineSearchFailure { .. } => GrmStatus::LineSearch,
        GrmError::Parse { .. } | GrmError::Range { .. } => GrmStatus::Parse,
        GrmError::Version(_) => GrmStatus::Version,
        GrmError::Io(_) => GrmStatus::Io,
        GrmError::IndexOutOfRange { .. }
        | GrmError::DimensionMismatch { .. }
        | GrmError::Simplex(_)
        | GrmError::InvalidArgument(_) => GrmStatus::InvalidArgument,
    }
}

struct Fail(GrmStatus, String);

impl From<GrmError> for Fail {
    fn from(e: GrmError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GrmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GrmStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GrmStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn model_ref<'a>(m: *const GrmModelHandle) -> Result<&'a GrmModel, Fail> {
    m.as_ref().map(|h| &h.0).ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn store_model(out: *mut *mut GrmModelHandle, m: GrmModel) -> Result<(), Fail> {
    // SAFETY: checked non-null by callers before any work is done.
    unsafe { *out = Box::into_raw(Box::new(GrmModelHandle(m))) };
    Ok(())
}

/// Message of the last failed call on this thread; empty when none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn grm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn grm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn grm_fit_options_default() -> GrmFitOptions {
    let d = FitConfig::default();
    GrmFitOptions {
        lambda: d.lambda,
        nq: d.nq as u32,
        newton_max: d.newton_max as u32,
        simplified: d.simplified,
        stagewise: d.stagewise,
        symmetrize: 0,
        seed: d.seed,
    }
}

/// Creates an all-zero model.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn grm_model_new(
    family: GrmFamily,
    p: usize,
    k: usize,
    simplified: bool,
    out: *mut *mut GrmModelHandle,
) -> GrmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        store_model(out, GrmModel::new(family.into(), p, k, simplified)?)
    })
}

/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn grm_model_free(m: *mut GrmModelHandle) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grm_model_load(path: *const c_char, out: *mut *mut GrmModelHandle) -> GrmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        store_model(out, io::read_model(path)?)
    })
}

/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grm_model_save(m: *const GrmModelHandle, path: *const c_char) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        io::write_model(path_arg(path)?, m)?;
        Ok(())
    })
}

/// Writes the number of variables and the model order.
///
/// # Safety
/// `m` must be a live handle; `p` and `k` may be null.
#[no_mangle]
pub unsafe extern "C" fn grm_model_shape(m: *const GrmModelHandle, p: *mut usize, k: *mut usize) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        if !p.is_null() {
            *p = m.p();
        }
        if !k.is_null() {
            *k = m.k();
        }
        Ok(())
    })
}

/// Reads entry `idx` (0-based, any order) of block `(l, j)`.
///
/// # Safety
/// `m` must be a live handle, `idx` must point to `len` values and `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn grm_model_get(
    m: *const GrmModelHandle,
    l: usize,
    j: usize,
    idx: *const usize,
    len: usize,
    value: *mut f64,
) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        let idx = slice_arg(idx, len, "idx")?;
        if value.is_null() {
            return Err(null("value"));
        }
        *value = m.get(l, j, idx)?;
        Ok(())
    })
}

/// Sets entry `idx` of block `(l, j)`.
///
/// # Safety
/// `m` must be a live handle and `idx` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn grm_model_set(
    m: *mut GrmModelHandle,
    l: usize,
    j: usize,
    idx: *const usize,
    len: usize,
    value: f64,
) -> GrmStatus {
    guard(|| {
        let m = m.as_mut().map(|h| &mut h.0).ok_or_else(|| null("model"))?;
        let idx = slice_arg(idx, len, "idx")?;
        m.set(l, j, idx, value)?;
        Ok(())
    })
}

/// Fits a model of order `k` to the row-major `n x p` matrix `data`.
///
/// # Safety
/// `data` must point to `n * p` values, `opts` may be null for defaults and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grm_fit(
    data: *const f64,
    n: usize,
    p: usize,
    family: GrmFamily,
    k: usize,
    opts: *const GrmFitOptions,
    out: *mut *mut GrmModelHandle,
) -> GrmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(p)
            .ok_or_else(|| Fail(GrmStatus::InvalidArgument, "n * p overflows".into()))?;
        let data = slice_arg(data, len, "data")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| grm_fit_options_default());
        let symmetrize = match o.symmetrize {
            0 => Symmetrize::Mean,
            1 => Symmetrize::MinMagnitude,
            s => return Err(Fail(GrmStatus::InvalidArgument, format!("unknown symmetrization {s}"))),
        };
        let cfg = FitConfig {
            lambda: o.lambda,
            nq: o.nq as usize,
            newton_max: o.newton_max as usize,
            simplified: o.simplified,
            stagewise: o.stagewise,
            symmetrize,
            seed: o.seed,
            ..Default::default()
        };
        let rows: Vec<Vec<f64>> = if p == 0 { Vec::new() } else { data.chunks(p).map(<[f64]>::to_vec).collect() };
        store_model(out, fit(&rows, family.into(), k, &cfg)?)
    })
}

/// Draws `n` Gibbs samples into the row-major `n x p` buffer `out`.
///
/// # Safety
/// `m` must be a live handle and `out` must have room for `n * p` values.
#[no_mangle]
pub unsafe extern "C" fn grm_model_sample(
    m: *const GrmModelHandle,
    n: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    out: *mut f64,
) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        if n > 0 && m.p() > 0 && out.is_null() {
            return Err(null("out"));
        }
        let cfg = GibbsConfig { burnin, thin, seed };
        let rows = gibbs_sample(m, n, &cfg)?;
        for (i, v) in rows.iter().flatten().enumerate() {
            *out.add(i) = *v;
        }
        Ok(())
    })
}

/// Renders the top-`top` report; free the result with [`grm_string_free`].
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grm_model_report(m: *const GrmModelHandle, top: usize, out: *mut *mut c_char) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = io::report_top(m, &io::default_vocab(m.p()), top)?.render();
        let c = CString::new(text).map_err(|e| Fail(GrmStatus::InvalidArgument, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Sets `*ok` to 1 when the normalizability check passes. For the exponential
/// family `u` (room for `p` values, may be null) receives the failing direction.
///
/// # Safety
/// `m` must be a live handle, `ok` valid and `u` null or of length `p`.
#[no_mangle]
pub unsafe extern "C" fn grm_model_check(
    m: *const GrmModelHandle,
    n_dirs: usize,
    seed: u64,
    ok: *mut i32,
    u: *mut f64,
) -> GrmStatus {
    guard(|| {
        let m = model_ref(m)?;
        if ok.is_null() {
            return Err(null("ok"));
        }
        match m.check_normalizable(n_dirs, seed) {
            Normalizability::Ok => *ok = 1,
            Normalizability::ViolatedAt(dir) => {
                *ok = 0;
                if !u.is_null() {
                    ptr::copy_nonoverlapping(dir.as_ptr(), u, dir.len());
                }
            }
        }
        Ok(())
    })
}

/// Bounds on the log partition of a node conditional with natural parameters
/// `eta[0..k]` on the statistics `x, x^(1/2), ..., x^(1/k)`, using `nq` pieces.
///
/// # Safety
/// `eta` must point to `k` values; `lower` and `upper` must be valid.
#[no_mangle]
pub unsafe extern "C" fn grm_log_partition(
    family: GrmFamily,
    eta: *const f64,
    k: usize,
    nq: usize,
    lower: *mut f64,
    upper: *mut f64,
) -> GrmStatus {
    guard(|| {
        let eta = slice_arg(eta, k, "eta")?;
        if lower.is_null() || upper.is_null() {
            return Err(null("lower/upper"));
        }
        let opts = PartitionOptions {
            nq,
            nq_max: nq,
            tol: f64::INFINITY,
            policy: PrecisionPolicy::BestEffort,
        };
        let b = log_partition(family.into(), eta, &opts)?;
        *lower = b.lower;
        *upper = b.upper;
        Ok(())
    })
}
