//! C ABI over `censored-panel-iv`.
//!
//! Every fallible function returns a [`CpivStatus`]; on failure the message
//! is kept per thread and can be fetched with [`cpiv_last_error_message`].
//! Strings returned by the library are owned by the caller and released with
//! [`cpiv_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use censored_panel_iv::dataset_io::{read_dataset, write_dataset};
use censored_panel_iv::estimator::{estimate, EstimateResult, EstimatorConfig};
use censored_panel_iv::experiment::json_config_error;
use censored_panel_iv::panel_sim::{censoring_rate, simulate, PanelConfig, PanelDataset};
use censored_panel_iv::trunc_moments::{
    bivariate_truncated_moment_quad, identity_residual, BivariateNormalSpec, MomentQuery,
};
use censored_panel_iv::Error;

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Estimation = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

/// Simulated or loaded panel.
pub struct CpivDataset {
    inner: PanelDataset,
}

/// Estimation result.
pub struct CpivEstimate {
    inner: EstimateResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CpivStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config { .. } | Error::Parse { .. } | Error::UnsupportedMode(_) => CpivStatus::Config,
            Error::Domain(_) | Error::UnsupportedOrder { .. } => CpivStatus::Domain,
            Error::Io { .. } => CpivStatus::Io,
            _ => CpivStatus::Estimation,
        };
        Failure(status, format!("{}: {e}", e.kind()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CpivStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpivStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside cpiv".into());
            CpivStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CpivStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CpivStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL if none.
/// Free with `cpiv_string_free`.
#[no_mangle]
pub extern "C" fn cpiv_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cpiv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulates a panel from a JSON panel config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_simulate(config_json: *const c_char, out: *mut *mut CpivDataset) -> CpivStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let out = out_arg(out, "out")?;
        let cfg: PanelConfig = serde_json::from_str(text).map_err(|e| Failure::from(json_config_error(&e)))?;
        let inner = simulate(&cfg)?;
        *out = Box::into_raw(Box::new(CpivDataset { inner }));
        Ok(())
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_read(dir: *const c_char, out: *mut *mut CpivDataset) -> CpivStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let out = out_arg(out, "out")?;
        let inner = read_dataset(&dir)?;
        *out = Box::into_raw(Box::new(CpivDataset { inner }));
        Ok(())
    })
}

/// Writes a dataset directory.
///
/// # Safety
/// `ds` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_write(ds: *const CpivDataset, dir: *const c_char) -> CpivStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        write_dataset(&ds.inner, &dir)?;
        Ok(())
    })
}

/// Panel dimensions. Any output pointer may be NULL.
///
/// # Safety
/// `ds` must be a live handle; non-NULL outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_dims(
    ds: *const CpivDataset,
    n_individuals: *mut usize,
    n_periods: *mut usize,
    n_regressors: *mut usize,
) -> CpivStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        for (p, v) in [(n_individuals, ds.n_individuals), (n_periods, ds.n_periods), (n_regressors, ds.n_regressors)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the `N x T` outcome matrix (row-major, NaN for absent cells)
/// into `buf`, which must hold at least `N * T` values.
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_outcomes(ds: *const CpivDataset, buf: *mut f64, len: usize) -> CpivStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < ds.y.len() {
            return Err(Failure(
                CpivStatus::BufferTooSmall,
                format!("need {} values, got {len}", ds.y.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, ds.y.len()).copy_from_slice(&ds.y);
        Ok(())
    })
}

/// Share of censored cells.
///
/// # Safety
/// `ds` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_censoring_rate(ds: *const CpivDataset, out: *mut f64) -> CpivStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        *out_arg(out, "out")? = censoring_rate(ds)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpiv_dataset_free(ds: *mut CpivDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Estimates with a JSON estimator config; NULL selects the defaults for the
/// dataset's variant.
///
/// # Safety
/// `ds` must be a live handle, `config_json` NULL or NUL-terminated, and
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate(
    ds: *const CpivDataset,
    config_json: *const c_char,
    out: *mut *mut CpivEstimate,
) -> CpivStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        let out = out_arg(out, "out")?;
        let cfg = if config_json.is_null() {
            EstimatorConfig::default()
        } else {
            let text = str_arg(config_json, "config_json")?;
            serde_json::from_str(text).map_err(|e| Failure::from(json_config_error(&e)))?
        };
        let inner = estimate(ds, &cfg)?;
        *out = Box::into_raw(Box::new(CpivEstimate { inner }));
        Ok(())
    })
}

/// Number of estimated parameters, or 0 for a NULL handle.
///
/// # Safety
/// `est` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate_n_params(est: *const CpivEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.estimates.len())
}

/// Copies estimates and standard errors; either buffer may be NULL.
///
/// # Safety
/// `est` must be a live handle; non-NULL buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate_values(
    est: *const CpivEstimate,
    estimates: *mut f64,
    std_errors: *mut f64,
    len: usize,
) -> CpivStatus {
    guard(|| {
        let r = &est.as_ref().ok_or_else(|| null("est"))?.inner;
        let n = r.estimates.len();
        if len < n {
            return Err(Failure(CpivStatus::BufferTooSmall, format!("need {n} values, got {len}")));
        }
        if !estimates.is_null() {
            std::slice::from_raw_parts_mut(estimates, n).copy_from_slice(&r.estimates);
        }
        if !std_errors.is_null() {
            std::slice::from_raw_parts_mut(std_errors, n).copy_from_slice(&r.std_errors);
        }
        Ok(())
    })
}

/// Name of parameter `index`, or NULL when out of range. Free with
/// `cpiv_string_free`.
///
/// # Safety
/// `est` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate_param_name(est: *const CpivEstimate, index: usize) -> *mut c_char {
    match est.as_ref().and_then(|e| e.inner.param_names.get(index)) {
        Some(name) => into_c_string(name.clone()),
        None => ptr::null_mut(),
    }
}

/// Full result as JSON. Free with `cpiv_string_free`.
///
/// # Safety
/// `est` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate_to_json(est: *const CpivEstimate) -> *mut c_char {
    match est.as_ref() {
        Some(e) => into_c_string(e.inner.to_json()),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `est` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpiv_estimate_free(est: *mut CpivEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// `E[U1^k U2^m | U1 > 0, U2 > 0]` by adaptive quadrature.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpiv_truncated_moment(
    mu1: f64,
    mu2: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    sigma12: f64,
    k: u32,
    m: u32,
    tol: f64,
    out: *mut f64,
) -> CpivStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = BivariateNormalSpec::new(mu1, mu2, sigma1_sq, sigma2_sq, sigma12)?;
        *out = bivariate_truncated_moment_quad(&spec, MomentQuery::new(k, m)?, tol)?;
        Ok(())
    })
}

/// Residual of the quadrant moment identity at order `(k, m)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpiv_identity_residual(
    mu1: f64,
    mu2: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    sigma12: f64,
    k: u32,
    m: u32,
    tol: f64,
    out: *mut f64,
) -> CpivStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = BivariateNormalSpec::new(mu1, mu2, sigma1_sq, sigma2_sq, sigma12)?;
        *out = identity_residual(&spec, MomentQuery::new(k, m)?, tol)?;
        Ok(())
    })
}
