use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use cpiv_ffi::*;

fn panel_json(n: usize) -> CString {
    CString::new(format!(
        r#"{{"variant":"independent_errors","n_individuals":{n},"n_periods":2,"n_regressors":1,
            "beta":[1.0],"error_cov":[[1.0,0.0],[0.0,1.5]],"seed":3}}"#
    ))
    .unwrap()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { cpiv_string_free(p) };
    s
}

fn simulate(n: usize) -> *mut CpivDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { cpiv_dataset_simulate(panel_json(n).as_ptr(), &mut ds) };
    assert_eq!(status, CpivStatus::Ok);
    ds
}

#[test]
fn simulate_estimate_round_trip() {
    let ds = simulate(3000);
    let (mut n, mut t) = (0usize, 0usize);
    unsafe {
        assert_eq!(cpiv_dataset_dims(ds, &mut n, &mut t, ptr::null_mut()), CpivStatus::Ok);
    }
    assert_eq!((n, t), (3000, 2));

    let mut y = vec![0.0; n * t];
    unsafe {
        assert_eq!(cpiv_dataset_outcomes(ds, y.as_mut_ptr(), y.len() - 1), CpivStatus::BufferTooSmall);
        assert_eq!(cpiv_dataset_outcomes(ds, y.as_mut_ptr(), y.len()), CpivStatus::Ok);
    }
    assert!(y.iter().all(|v| *v >= 0.0));
    let mut rate = 0.0;
    unsafe { assert_eq!(cpiv_dataset_censoring_rate(ds, &mut rate), CpivStatus::Ok) };
    assert_eq!(rate, y.iter().filter(|v| **v == 0.0).count() as f64 / y.len() as f64);

    let mut est = ptr::null_mut();
    unsafe { assert_eq!(cpiv_estimate(ds, ptr::null(), &mut est), CpivStatus::Ok) };
    let k = unsafe { cpiv_estimate_n_params(est) };
    assert_eq!(k, 3);
    let (mut b, mut se) = (vec![0.0; k], vec![0.0; k]);
    unsafe { assert_eq!(cpiv_estimate_values(est, b.as_mut_ptr(), se.as_mut_ptr(), k), CpivStatus::Ok) };
    assert_eq!(take_string(unsafe { cpiv_estimate_param_name(est, 0) }), "beta_0");
    assert!(unsafe { cpiv_estimate_param_name(est, k) }.is_null());
    assert!((b[0] - 1.0).abs() < 5.0 * se[0], "{b:?} {se:?}");

    let json: serde_json::Value = serde_json::from_str(&take_string(unsafe { cpiv_estimate_to_json(est) })).unwrap();
    assert_eq!(json["estimates"][0].as_f64().unwrap(), b[0]);

    unsafe {
        cpiv_estimate_free(est);
        cpiv_dataset_free(ds);
    }
}

#[test]
fn write_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("panel").to_str().unwrap()).unwrap();
    let ds = simulate(50);
    unsafe { assert_eq!(cpiv_dataset_write(ds, path.as_ptr()), CpivStatus::Ok) };
    let mut back = ptr::null_mut();
    unsafe { assert_eq!(cpiv_dataset_read(path.as_ptr(), &mut back), CpivStatus::Ok) };
    let (mut a, mut b) = (vec![0.0; 100], vec![0.0; 100]);
    unsafe {
        cpiv_dataset_outcomes(ds, a.as_mut_ptr(), 100);
        cpiv_dataset_outcomes(back, b.as_mut_ptr(), 100);
        cpiv_dataset_free(ds);
        cpiv_dataset_free(back);
    }
    assert_eq!(a, b);
}

#[test]
fn errors_set_status_and_message() {
    let bad = CString::new(r#"{"variant":"independent_errors","n_individuals":10}"#).unwrap();
    let mut ds = ptr::null_mut();
    let status = unsafe { cpiv_dataset_simulate(bad.as_ptr(), &mut ds) };
    assert_eq!(status, CpivStatus::Config);
    assert!(ds.is_null());
    assert!(take_string(cpiv_last_error_message()).starts_with("config"));

    let ds = simulate(20);
    let bad_cfg = CString::new(r#"{"method":"triple_variance_fe"}"#).unwrap();
    let mut est = ptr::null_mut();
    let status = unsafe { cpiv_estimate(ds, bad_cfg.as_ptr(), &mut est) };
    assert_eq!(status, CpivStatus::Config);
    assert!(take_string(cpiv_last_error_message()).contains("T >= 3"));
    unsafe { cpiv_dataset_free(ds) };

    let mut out = 0.0;
    let status = unsafe { cpiv_truncated_moment(0.0, 0.0, -1.0, 1.0, 0.0, 1, 1, 1e-8, &mut out) };
    assert_eq!(status, CpivStatus::Domain);

    unsafe {
        cpiv_dataset_free(ptr::null_mut());
        cpiv_estimate_free(ptr::null_mut());
        cpiv_string_free(ptr::null_mut());
    }
    assert_eq!(unsafe { cpiv_estimate_n_params(ptr::null()) }, 0);
}

#[test]
fn moments_and_identity() {
    let mut m = 0.0;
    unsafe { assert_eq!(cpiv_truncated_moment(0.0, 0.0, 1.0, 1.0, 0.0, 1, 0, 1e-10, &mut m), CpivStatus::Ok) };
    assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
    let mut r = 1.0;
    unsafe { assert_eq!(cpiv_identity_residual(0.3, -0.4, 1.2, 0.8, 0.3, 2, 1, 1e-9, &mut r), CpivStatus::Ok) };
    assert!(r.abs() < 1e-7, "{r}");
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("cpiv.h").exists());
    let target = manifest.join("../../target").join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = target.join("libcpiv_ffi.a");
    if !lib.exists() {
        // The static library is built with the crate; nothing to link yet
        // when only the test harness was compiled.
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "cpiv.h"
int main(void) {
    double m = 0.0;
    CpivStatus st = cpiv_truncated_moment(0.0, 0.0, 1.0, 1.0, 0.0, 1, 0, 1e-10, &m);
    if (st != CPIV_STATUS_OK) return 1;
    printf("%.12f\n", m);
    st = cpiv_truncated_moment(0.0, 0.0, -1.0, 1.0, 0.0, 1, 0, 1e-10, &m);
    if (st != CPIV_STATUS_DOMAIN) return 2;
    char *msg = cpiv_last_error_message();
    if (msg == NULL) return 3;
    cpiv_string_free(msg);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.797884560803");
}
