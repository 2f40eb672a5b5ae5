//! C interface to the `vdib` library.
//!
//! Models live behind opaque [`VdibHandle`] pointers. Every entry point
//! returns a [`VdibStatus`]; on failure the message is available from
//! [`vdib_last_error`] on the same thread until the next failing call.
//! Spike and target arrays are time-major: element `(unit, t)` sits at
//! `t * units + unit`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vdib::checkpoint::Checkpoint;
use vdib::gradcheck::{default_formula, run_checks, Scope};
use vdib::harness::runs::{STREAM_EVAL, STREAM_INIT, STREAM_SAMPLING};
use vdib::harness::{build_model, ConfigFormat, ExperimentConfig};
use vdib::mathcore::Rng;
use vdib::spikes::{Reference, SpikeTrain};
use vdib::trainer::{Sample, Trainer};
use vdib::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VdibStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    Parse = 5,
    Invalid = 6,
    State = 7,
    Io = 8,
    Serde = 9,
    CheckFailed = 10,
    Panic = 11,
}

impl From<&Error> for VdibStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => VdibStatus::Config,
            Error::Shape(_) => VdibStatus::Shape,
            Error::Parse { .. } => VdibStatus::Parse,
            Error::Invalid(_) => VdibStatus::Invalid,
            Error::State(_) => VdibStatus::State,
            Error::Io { .. } => VdibStatus::Io,
            Error::Serde(_) => VdibStatus::Serde,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VdibEpisodeStats {
    pub ell_dec: f64,
    pub ell_enc: f64,
    pub spike_rate_readout: f64,
    pub spike_rate_hidden: f64,
    pub mse: f64,
}

/// A model with its experiment config and training state.
pub struct VdibHandle {
    config: ExperimentConfig,
    trainer: Trainer,
    iterations: u64,
    rng: Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(VdibStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(VdibStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> VdibStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VdibStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            VdibStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VdibStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VdibStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle_arg<'a>(h: *mut VdibHandle) -> FfiResult<&'a mut VdibHandle> {
    h.as_mut().ok_or_else(|| null("handle"))
}

fn checked_len(a: usize, b: usize) -> FfiResult<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(VdibStatus::Shape, "array size overflows".to_string()))
}

unsafe fn train_arg(p: *const u8, units: usize, steps: usize, what: &str) -> FfiResult<SpikeTrain> {
    let data = slice_arg(p, checked_len(units, steps)?, what)?;
    let mut train = SpikeTrain::zeros(units, steps);
    for t in 0..steps {
        train.set_column(t, &data[t * units..(t + 1) * units])?;
    }
    Ok(train)
}

fn new_handle(config: ExperimentConfig, model: vdib::trainer::VdibModel, iterations: u64) -> FfiResult<*mut VdibHandle> {
    let seed = config.vdib.seed;
    let trainer = Trainer::new(model, config.vdib.clone(), Rng::new(seed, STREAM_SAMPLING))?;
    Ok(Box::into_raw(Box::new(VdibHandle {
        config,
        trainer,
        iterations,
        rng: Rng::new(seed, STREAM_EVAL),
    })))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vdib_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialised model from a JSON experiment config.
///
/// # Safety
/// `config_json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_new(config_json: *const c_char, out: *mut *mut VdibHandle) -> VdibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let config = ExperimentConfig::from_str_with_overrides(text, ConfigFormat::Json, &[])?;
        let model = build_model(&config, &mut Rng::new(config.vdib.seed, STREAM_INIT))?;
        *out = new_handle(config, model, 0)?;
        Ok(())
    })
}

/// Loads a checkpoint written by the library or by [`vdib_model_save`].
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_load(path: *const c_char, out: *mut *mut VdibHandle) -> VdibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::load(&path)?;
        let config: ExperimentConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::config(format!("checkpoint config is not an experiment config: {e}")))?;
        *out = new_handle(config, ck.model, ck.iterations)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_free(handle: *mut VdibHandle) {
    if !handle.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(handle))));
    }
}

/// # Safety
/// `handle` must be live; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_save(handle: *mut VdibHandle, path: *const c_char) -> VdibStatus {
    guard(|| {
        let h = handle_arg(handle)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::new(h.trainer.model.clone(), &h.config, h.iterations)?;
        ck.save(&path)?;
        Ok(())
    })
}

/// Input, readout and decoder-output widths, and the decoder window.
///
/// # Safety
/// `handle` must be live; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_dims(
    handle: *mut VdibHandle,
    n_input: *mut usize,
    n_readout: *mut usize,
    n_out: *mut usize,
    window: *mut usize,
) -> VdibStatus {
    guard(|| {
        let h = handle_arg(handle)?;
        let m = &h.trainer.model;
        for (p, v) in [
            (n_input, m.encoder.n_input()),
            (n_readout, m.encoder.n_readout()),
            (n_out, m.decoder.n_out),
            (window, m.decoder.window),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Runs one training sequence. `x` holds `steps × n_input` spikes,
/// `targets` holds `steps × n_out` values, and `defined` (nullable) marks
/// the timesteps whose target is used; null means every step.
///
/// # Safety
/// Arrays must be readable for the stated lengths; `handle` must be live.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_train_sample(
    handle: *mut VdibHandle,
    x: *const u8,
    steps: usize,
    targets: *const f64,
    defined: *const u8,
    stats: *mut VdibEpisodeStats,
) -> VdibStatus {
    guard(|| {
        let h = handle_arg(handle)?;
        let n_in = h.trainer.model.encoder.n_input();
        let n_out = h.trainer.model.decoder.n_out;
        let x = train_arg(x, n_in, steps, "x")?;
        let targets = slice_arg(targets, checked_len(steps, n_out)?, "targets")?;
        let mask = if defined.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(defined, steps))
        };
        let r = (0..steps)
            .map(|t| {
                let on = mask.is_none_or(|m| m[t] != 0);
                on.then(|| targets[t * n_out..(t + 1) * n_out].to_vec())
            })
            .collect();
        let sample = Sample {
            x,
            r: Reference::new(n_out, r)?,
            label: None,
        };
        let s = h.trainer.train_step(&sample)?;
        h.iterations += 1;
        if let Some(out) = stats.as_mut() {
            *out = VdibEpisodeStats {
                ell_dec: s.ell_dec,
                ell_enc: s.ell_enc,
                spike_rate_readout: s.spike_rate_readout,
                spike_rate_hidden: s.spike_rate_hidden,
                mse: s.mse,
            };
        }
        Ok(())
    })
}

/// Samples a readout train for `x` (`steps × n_input`) into `y`
/// (`steps × n_readout`), from rest.
///
/// # Safety
/// Arrays must be valid for the stated lengths; `handle` must be live.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_encode(handle: *mut VdibHandle, x: *const u8, steps: usize, y: *mut u8) -> VdibStatus {
    guard(|| {
        let h = handle_arg(handle)?;
        let n_in = h.trainer.model.encoder.n_input();
        let n_y = h.trainer.model.encoder.n_readout();
        let x = train_arg(x, n_in, steps, "x")?;
        if y.is_null() {
            return Err(null("y"));
        }
        let sampled = h.trainer.model.encoder.sample_sequence(&x, &mut h.rng)?;
        let out = std::slice::from_raw_parts_mut(y, checked_len(steps, n_y)?);
        out.copy_from_slice(sampled.y.as_slice());
        Ok(())
    })
}

/// Log-probability of readout train `y` given input `x`, from rest.
///
/// # Safety
/// Arrays must be readable for the stated lengths; `handle` must be live.
#[no_mangle]
pub unsafe extern "C" fn vdib_model_sequence_log_prob(
    handle: *mut VdibHandle,
    x: *const u8,
    y: *const u8,
    steps: usize,
    out: *mut f64,
) -> VdibStatus {
    guard(|| {
        let h = handle_arg(handle)?;
        let enc = &mut h.trainer.model.encoder;
        let x = train_arg(x, enc.n_input(), steps, "x")?;
        let y = train_arg(y, enc.n_readout(), steps, "y")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = enc.sequence_log_prob(&x, &y)?;
        Ok(())
    })
}

/// Gradient and enumeration checks. `scope`: 0 all, 1 decoder, 2 readout,
/// 3 oracle. Returns [`VdibStatus::CheckFailed`] if any check fails.
#[no_mangle]
pub extern "C" fn vdib_gradcheck(scope: u32, seed: u64) -> VdibStatus {
    guard(|| {
        let scope = match scope {
            0 => Scope::All,
            1 => Scope::Decoder,
            2 => Scope::Readout,
            3 => Scope::Oracle,
            s => return Err(Failure(VdibStatus::Invalid, format!("unknown scope {s}"))),
        };
        let failed: Vec<String> = run_checks(scope, seed, default_formula())?
            .into_iter()
            .filter(|r| !r.passed)
            .map(|r| r.to_string())
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Failure(VdibStatus::CheckFailed, failed.join("; ")))
        }
    })
}
