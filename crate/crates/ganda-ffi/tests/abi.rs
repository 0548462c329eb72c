//! Exercises the C ABI the way a foreign caller would: raw pointers, status
//! codes, explicit frees, and the thread-local error message.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use ganda_ffi::*;

fn last_error() -> String {
    unsafe {
        let needed = ganda_last_error_message(ptr::null_mut(), 0);
        if needed == 0 {
            return String::new();
        }
        let mut buf = vec![0u8; needed];
        ganda_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len());
        CStr::from_bytes_with_nul(&buf).unwrap().to_string_lossy().into_owned()
    }
}

#[test]
fn moons_fit_predict_history() {
    unsafe {
        let mut ds: *mut GandaDataset = ptr::null_mut();
        let status = ganda_dataset_moons(30, 35.0, 0.1, 7, &mut ds);
        assert!(status == GandaStatus::Ok);
        assert_eq!(ganda_dataset_source_len(ds), 60);
        assert_eq!(ganda_dataset_target_len(ds), 60);
        assert_eq!(ganda_dataset_dim(ds), 2);
        assert_eq!(ganda_dataset_class_count(ds), 2);

        let cfg = CString::new(
            r#"{"variant":"GAN_DA","epochs":2,"batch_size":8,"lr":0.002,"seed":3,"hidden":16}"#,
        )
        .unwrap();
        let mut run: *mut GandaRun = ptr::null_mut();
        let status = ganda_fit(ds, cfg.as_ptr(), &mut run);
        assert!(status == GandaStatus::Ok, "{}", last_error());
        assert_eq!(ganda_run_epochs(run), 2);
        assert_eq!(ganda_run_diverged(run), 0);
        let acc = ganda_run_final_target_accuracy(run);
        assert!((0.0..=1.0).contains(&acc));

        let mut json: *mut c_char = ptr::null_mut();
        assert!(ganda_run_history_json(run, &mut json) == GandaStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        assert!(text.starts_with('[') && text.contains("\"acc_target\""));
        ganda_string_free(json);

        let features = [0.5f64, 0.2, -1.0, 0.3];
        let mut labels = [usize::MAX; 2];
        let status = ganda_run_predict(run, features.as_ptr(), 2, 2, labels.as_mut_ptr());
        assert!(status == GandaStatus::Ok, "{}", last_error());
        assert!(labels.iter().all(|&l| l < 2));

        ganda_run_free(run);
        ganda_dataset_free(ds);
    }
}

#[test]
fn status_codes_and_error_messages() {
    unsafe {
        // NULL out pointer
        assert!(ganda_dataset_moons(10, 35.0, 0.1, 0, ptr::null_mut()) == GandaStatus::InvalidArgument);
        assert!(last_error().contains("NULL"));

        // bad config JSON
        let mut ds: *mut GandaDataset = ptr::null_mut();
        assert!(ganda_dataset_moons(10, 35.0, 0.1, 0, &mut ds) == GandaStatus::Ok);
        let cfg = CString::new(r#"{"variant":"NOPE"}"#).unwrap();
        let mut run: *mut GandaRun = ptr::null_mut();
        assert!(ganda_fit(ds, cfg.as_ptr(), &mut run) == GandaStatus::ConfigError);
        assert!(!last_error().is_empty());

        // invalid config values
        let cfg = CString::new(r#"{"variant":"GAN_DA","epochs":0,"batch_size":8,"lr":0.01,"seed":1}"#).unwrap();
        assert!(ganda_fit(ds, cfg.as_ptr(), &mut run) == GandaStatus::ConfigError);

        // missing CSV
        let missing = CString::new("/nonexistent/source.csv").unwrap();
        let missing2 = CString::new("/nonexistent/target.csv").unwrap();
        let mut ds2: *mut GandaDataset = ptr::null_mut();
        assert!(ganda_dataset_load_csv(missing.as_ptr(), missing2.as_ptr(), &mut ds2) == GandaStatus::IoError);

        // frees accept NULL
        ganda_dataset_free(ptr::null_mut());
        ganda_run_free(ptr::null_mut());
        ganda_string_free(ptr::null_mut());
        ganda_dataset_free(ds);
    }
}

#[test]
fn divergence_reports_status_and_partial_run() {
    unsafe {
        let mut ds: *mut GandaDataset = ptr::null_mut();
        assert!(ganda_dataset_moons(100, 35.0, 0.02, 1002, &mut ds) == GandaStatus::Ok);
        let cfg = CString::new(
            r#"{"variant":"CDAN","epochs":10,"batch_size":8,"lr":0.01,"lambda_adv":10.0,"seed":1,"hidden":64}"#,
        )
        .unwrap();
        let mut run: *mut GandaRun = ptr::null_mut();
        let status = ganda_fit(ds, cfg.as_ptr(), &mut run);
        assert!(status == GandaStatus::Diverged, "{}", last_error());
        assert!(!run.is_null());
        assert_eq!(ganda_run_diverged(run), 1);
        assert!(ganda_run_epochs(run) < 10);
        ganda_run_free(run);
        ganda_dataset_free(ds);
    }
}

#[test]
fn grad_check_passes_through() {
    unsafe {
        let mut err = f64::NAN;
        assert!(ganda_grad_check(2, &mut err) == GandaStatus::Ok);
        assert!(err.is_finite() && err < 1e-5);
        assert!(ganda_grad_check(2, ptr::null_mut()) == GandaStatus::InvalidArgument);
    }
}
