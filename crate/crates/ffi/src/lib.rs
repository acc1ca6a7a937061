//! C interface to `hrir_ident`.
//!
//! Objects are opaque handles created by `hid_*_new`-style functions and
//! released with the matching `hid_*_free`. Every fallible call returns a
//! [`HidStatus`]; on failure `hid_last_error_message` describes the cause
//! for the calling thread. Structured settings (scenario, identifier and
//! trainer parameters) are passed as JSON strings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hrir_ident::identifiers::{run_baseline, BaselineConfig, ElevVector, IdentificationResult, StorePolicy};
use hrir_ident::metrics::{itd, normalized_misalignment, AlignedPair};
use hrir_ident::neural::{identify_sequence, init_identity, train, DnnParams, TrainerConfig};
use hrir_ident::scenario::{render, render_at_snr, synth_trajectory, Recording, RotationProfile, SynthKind};
use hrir_ident::signals::{build_excitation_bank, generate_perfect_sweep, ExcitationBank};
use hrir_ident::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HidStatus {
    Ok = 0,
    InvalidArgument = 2,
    NumericalFailure = 3,
    Io = 4,
    Internal = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Per-speaker excitation signals.
pub struct HidBank(ExcitationBank);

/// Microphone signal plus its rotation and noise metadata.
pub struct HidRecording(Recording);

/// Error trace and stored estimates of one identification run.
pub struct HidResult(IdentificationResult);

/// Parameters of the recurrent identifier.
pub struct HidParams(DnnParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

struct Failure(HidStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => HidStatus::InvalidArgument,
            Error::NumericalFailure { .. } => HidStatus::NumericalFailure,
            Error::Io { .. } | Error::Format { .. } => HidStatus::Io,
            Error::Internal(_) => HidStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HidStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HidStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HidStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            HidStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn json<T: serde::de::DeserializeOwned>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let text = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    serde_json::from_str(text).map_err(|e| invalid(format!("{what}: {e}")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(invalid(format!(
            "output buffer holds {} values, {} required",
            dst.len(),
            src.len()
        )));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn policy(stride: usize) -> StorePolicy {
    if stride <= 1 {
        StorePolicy::EveryFrame
    } else {
        StorePolicy::Stride { stride }
    }
}

/// Message describing the last failure on this thread; empty after a
/// successful call. Valid until the next `hid_*` call on the same thread.
#[no_mangle]
pub extern "C" fn hid_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a perfect-sweep excitation bank for `speakers` loudspeakers,
/// `taps` identified taps per speaker and `length` samples.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn hid_bank_new(
    speakers: usize,
    taps: usize,
    length: usize,
    out: *mut *mut HidBank,
) -> HidStatus {
    guard(|| {
        let sweep = generate_perfect_sweep(speakers * taps)?;
        let bank = build_excitation_bank(&sweep, speakers, taps, length)?;
        store(out, HidBank(bank))
    })
}

/// # Safety
/// `bank` must come from `hid_bank_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hid_bank_free(bank: *mut HidBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Regressor width `S * K~`, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_bank_width(bank: *const HidBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.width())
}

/// Writes the stacked regressor at time `n` into `out` (`out_len` must equal the width).
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hid_bank_regressor(
    bank: *const HidBank,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> HidStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        let out = slice_mut(out, out_len, "out")?;
        if out.len() != bank.0.width() {
            return Err(invalid(format!("regressor needs {} values", bank.0.width())));
        }
        bank.0.regressor_into(n, out)?;
        Ok(())
    })
}

/// Wraps an existing microphone signal.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_new(
    samples: *const f64,
    len: usize,
    noise_variance: f64,
    theta0: f64,
    omega: f64,
    sample_rate: f64,
    out: *mut *mut HidRecording,
) -> HidStatus {
    guard(|| {
        let y = slice(samples, len, "samples")?.to_vec();
        let rotation = RotationProfile::new(theta0, omega, sample_rate)?;
        if !(noise_variance >= 0.0) {
            return Err(invalid("noise variance must be >= 0"));
        }
        store(
            out,
            HidRecording(Recording {
                y,
                noise_variance,
                snr_db: None,
                seed: 0,
                rotation,
            }),
        )
    })
}

/// Renders a synthetic scenario through `bank`. `scenario_json` is a
/// tagged object such as `{"kind":"static","seed":1,"decay":4.0}`; `taps` is
/// the true IR length. A NaN `snr_db` means `noise_variance` is used as is.
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_synthesize(
    bank: *const HidBank,
    scenario_json: *const c_char,
    taps: usize,
    theta0: f64,
    omega: f64,
    sample_rate: f64,
    snr_db: f64,
    noise_variance: f64,
    seed: u64,
    out: *mut *mut HidRecording,
) -> HidStatus {
    guard(|| {
        let bank = &borrow(bank, "bank")?.0;
        let kind: SynthKind = json(scenario_json, "scenario_json")?;
        let rotation = RotationProfile::new(theta0, omega, sample_rate)?;
        let traj = synth_trajectory(&kind, bank.len(), bank.speakers(), taps, rotation)?;
        let rec = if snr_db.is_nan() {
            render(&traj, bank, noise_variance, seed)?
        } else {
            render_at_snr(&traj, bank, snr_db, seed)?
        };
        store(out, HidRecording(rec))
    })
}

/// # Safety
/// `recording` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_len(recording: *const HidRecording) -> usize {
    recording.as_ref().map_or(0, |r| r.0.len())
}

/// Noise variance of the recording, NaN for a null handle.
///
/// # Safety
/// `recording` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_noise_variance(recording: *const HidRecording) -> f64 {
    recording.as_ref().map_or(f64::NAN, |r| r.0.noise_variance)
}

/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_samples(
    recording: *const HidRecording,
    out: *mut f64,
    out_len: usize,
) -> HidStatus {
    guard(|| {
        let rec = borrow(recording, "recording")?;
        copy_out(&rec.0.y, slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `recording` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hid_recording_free(recording: *mut HidRecording) {
    if !recording.is_null() {
        drop(Box::from_raw(recording));
    }
}

/// Runs a classical identifier described by `config_json`, e.g.
/// `{"algo":"nlms","mu":0.5}`, keeping every `stride`-th estimate.
///
/// # Safety
/// Handles must be live; `config_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hid_identify_baseline(
    bank: *const HidBank,
    recording: *const HidRecording,
    config_json: *const c_char,
    stride: usize,
    out: *mut *mut HidResult,
) -> HidStatus {
    guard(|| {
        let bank = &borrow(bank, "bank")?.0;
        let rec = &borrow(recording, "recording")?.0;
        let cfg: BaselineConfig = json(config_json, "config_json")?;
        let result = run_baseline(&cfg, bank, rec, &policy(stride))?;
        store(out, HidResult(result))
    })
}

/// Identity-initialized parameters for width `d`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hid_params_identity(d: usize, out: *mut *mut HidParams) -> HidStatus {
    guard(|| store(out, HidParams(init_identity(d)?)))
}

/// Trains the recurrent identifier on the whole recording. A null
/// `trainer_json` uses the default settings.
///
/// # Safety
/// Handles must be live; `trainer_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hid_params_train(
    bank: *const HidBank,
    recording: *const HidRecording,
    trainer_json: *const c_char,
    out: *mut *mut HidParams,
) -> HidStatus {
    guard(|| {
        let bank = &borrow(bank, "bank")?.0;
        let rec = &borrow(recording, "recording")?.0;
        let cfg: TrainerConfig = if trainer_json.is_null() {
            TrainerConfig::default()
        } else {
            json(trainer_json, "trainer_json")?
        };
        store(out, HidParams(train(bank, rec, &cfg)?.params))
    })
}

/// Number of scalars in the parameter set, 0 for a null handle.
///
/// # Safety
/// `params` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_params_count(params: *const HidParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.count())
}

/// Copies all parameters in checkpoint order.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hid_params_values(
    params: *const HidParams,
    out: *mut f64,
    out_len: usize,
) -> HidStatus {
    guard(|| {
        let p = borrow(params, "params")?;
        copy_out(p.0.as_flat(), slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hid_params_free(params: *mut HidParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Runs the recurrent identifier with fixed parameters from `ĥ = 0`, `c = 0`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hid_identify_dnn(
    params: *const HidParams,
    bank: *const HidBank,
    recording: *const HidRecording,
    stride: usize,
    out: *mut *mut HidResult,
) -> HidStatus {
    guard(|| {
        let params = &borrow(params, "params")?.0;
        let bank = &borrow(bank, "bank")?.0;
        let rec = &borrow(recording, "recording")?.0;
        let d = params.width();
        let run = identify_sequence(
            params,
            bank,
            rec,
            &ElevVector::zeros(d),
            &vec![0.0; d],
            &policy(stride),
        )?;
        let mut result = IdentificationResult::empty("dnn", bank.speakers(), bank.taps(), rec.rotation);
        result.frames = rec.len();
        result.e_trace = run.e_trace;
        result.snapshots = run.snapshots;
        store(out, HidResult(result))
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_result_snapshot_count(result: *const HidResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.snapshots.len())
}

/// Copies snapshot `index`: its frame, azimuth in degrees and the `S * K~` estimate.
///
/// # Safety
/// Scalar outputs may be null; `values` must point to `values_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hid_result_snapshot(
    result: *const HidResult,
    index: usize,
    frame: *mut usize,
    azimuth: *mut f64,
    values: *mut f64,
    values_len: usize,
) -> HidStatus {
    guard(|| {
        let r = borrow(result, "result")?;
        let snap =
            r.0.snapshots
                .get(index)
                .ok_or_else(|| invalid(format!("snapshot {index} of {}", r.0.snapshots.len())))?;
        copy_out(&snap.values, slice_mut(values, values_len, "values")?)?;
        if !frame.is_null() {
            *frame = snap.frame;
        }
        if !azimuth.is_null() {
            *azimuth = snap.azimuth;
        }
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hid_result_e_trace_len(result: *const HidResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.e_trace.len())
}

/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hid_result_e_trace(
    result: *const HidResult,
    out: *mut f64,
    out_len: usize,
) -> HidStatus {
    guard(|| {
        let r = borrow(result, "result")?;
        copy_out(&r.0.e_trace, slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hid_result_free(result: *mut HidResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Normalized misalignment in dB over `count` consecutive IR pairs of
/// `taps` samples each.
///
/// # Safety
/// `truth` and `estimate` must each point to `count * taps` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hid_normalized_misalignment(
    truth: *const f64,
    estimate: *const f64,
    taps: usize,
    count: usize,
    out_db: *mut f64,
) -> HidStatus {
    guard(|| {
        if taps == 0 || count == 0 {
            return Err(invalid("taps and count must be >= 1"));
        }
        let t = slice(truth, taps * count, "truth")?;
        let e = slice(estimate, taps * count, "estimate")?;
        if out_db.is_null() {
            return Err(null("out_db"));
        }
        let pairs = t
            .chunks(taps)
            .zip(e.chunks(taps))
            .map(|(a, b)| AlignedPair::new(a.to_vec(), b.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        *out_db = normalized_misalignment(&pairs)?.nm_db;
        Ok(())
    })
}

/// Interaural time difference in seconds, positive when the right ear lags.
///
/// # Safety
/// `left` and `right` must each point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hid_itd(
    left: *const f64,
    right: *const f64,
    len: usize,
    max_lag: usize,
    sample_rate: f64,
    out_seconds: *mut f64,
) -> HidStatus {
    guard(|| {
        let l = slice(left, len, "left")?;
        let r = slice(right, len, "right")?;
        if out_seconds.is_null() {
            return Err(null("out_seconds"));
        }
        *out_seconds = itd(l, r, max_lag, sample_rate)?;
        Ok(())
    })
}

/// Null-terminated library version string.
#[no_mangle]
pub extern "C" fn hid_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string"),
        };
    VERSION.as_ptr()
}
