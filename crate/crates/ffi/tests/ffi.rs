use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use vdib::harness::{ExperimentConfig, Task};
use vdib_ffi::*;

fn small_config() -> CString {
    let cfg = ExperimentConfig::from_task(
        Task::PredictiveCoding,
        &["train_examples=10".to_string(), "vdib.steps=12".to_string()],
    )
    .unwrap();
    CString::new(serde_json::to_string(&cfg).unwrap()).unwrap()
}

fn new_model() -> *mut VdibHandle {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { vdib_model_new(small_config().as_ptr(), &mut h) }, VdibStatus::Ok);
    assert!(!h.is_null());
    h
}

fn dims(h: *mut VdibHandle) -> (usize, usize, usize) {
    let (mut i, mut y, mut o, mut w) = (0, 0, 0, 0);
    assert_eq!(unsafe { vdib_model_dims(h, &mut i, &mut y, &mut o, &mut w) }, VdibStatus::Ok);
    (i, y, o)
}

fn last_error() -> String {
    let p = vdib_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dimensions_follow_the_config() {
    let h = new_model();
    assert_eq!(dims(h), (20, 10, 210));
    unsafe { vdib_model_free(h) };
}

#[test]
fn train_encode_and_log_prob() {
    let h = new_model();
    let (n_in, n_y, n_out) = dims(h);
    let steps = 12;
    let x: Vec<u8> = (0..steps * n_in).map(|k| u8::from(k % 7 == 0)).collect();
    let mut targets = vec![0.0; steps * n_out];
    for t in 0..steps {
        targets[t * n_out + t % n_out] = 1.0;
    }
    let mut stats = VdibEpisodeStats::default();
    let st = unsafe { vdib_model_train_sample(h, x.as_ptr(), steps, targets.as_ptr(), ptr::null(), &mut stats) };
    assert_eq!(st, VdibStatus::Ok);
    assert!(stats.ell_dec.is_finite() && stats.ell_dec > 0.0);
    assert!((0.0..=1.0).contains(&stats.spike_rate_readout));

    let mut y = vec![7u8; steps * n_y];
    assert_eq!(unsafe { vdib_model_encode(h, x.as_ptr(), steps, y.as_mut_ptr()) }, VdibStatus::Ok);
    assert!(y.iter().all(|&v| v <= 1));
    let mut lp = 0.0;
    assert_eq!(
        unsafe { vdib_model_sequence_log_prob(h, x.as_ptr(), y.as_ptr(), steps, &mut lp) },
        VdibStatus::Ok
    );
    assert!(lp.is_finite() && lp < 0.0);
    unsafe { vdib_model_free(h) };
}

#[test]
fn save_and_load_preserve_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let h = new_model();
    let (n_in, n_y, _) = dims(h);
    assert_eq!(unsafe { vdib_model_save(h, path.as_ptr()) }, VdibStatus::Ok);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { vdib_model_load(path.as_ptr(), &mut g) }, VdibStatus::Ok);
    let steps = 6;
    let x: Vec<u8> = (0..steps * n_in).map(|k| u8::from(k % 3 == 0)).collect();
    let y: Vec<u8> = (0..steps * n_y).map(|k| u8::from(k % 4 == 1)).collect();
    let (mut a, mut b) = (0.0, 1.0);
    unsafe {
        assert_eq!(vdib_model_sequence_log_prob(h, x.as_ptr(), y.as_ptr(), steps, &mut a), VdibStatus::Ok);
        assert_eq!(vdib_model_sequence_log_prob(g, x.as_ptr(), y.as_ptr(), steps, &mut b), VdibStatus::Ok);
        vdib_model_free(h);
        vdib_model_free(g);
    }
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn errors_map_to_status_codes() {
    let mut h = ptr::null_mut();
    let bad = CString::new("{\"task\": \"predictive_coding\", \"vdib\": {\"beta\": -1}}").unwrap();
    assert_eq!(unsafe { vdib_model_new(bad.as_ptr(), &mut h) }, VdibStatus::Config);
    assert!(last_error().contains("beta"));
    assert!(h.is_null());

    assert_eq!(unsafe { vdib_model_new(ptr::null(), &mut h) }, VdibStatus::NullPointer);
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { vdib_model_load(missing.as_ptr(), &mut h) }, VdibStatus::Io);

    let h = new_model();
    let x = [2u8; 20];
    let mut y = [0u8; 10];
    assert_eq!(unsafe { vdib_model_encode(h, x.as_ptr(), 1, y.as_mut_ptr()) }, VdibStatus::Shape);
    assert_eq!(unsafe { vdib_model_encode(ptr::null_mut(), x.as_ptr(), 1, y.as_mut_ptr()) }, VdibStatus::NullPointer);
    unsafe {
        vdib_model_free(h);
        vdib_model_free(ptr::null_mut());
    }
}

#[test]
fn gradcheck_entry_point() {
    assert_eq!(vdib_gradcheck(2, 0), VdibStatus::Ok);
    assert_eq!(vdib_gradcheck(9, 0), VdibStatus::Invalid);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/vdib.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["vdib_model_new", "vdib_model_train_sample", "vdib_last_error", "VDIB_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
