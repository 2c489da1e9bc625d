//! C ABI over `tacforge`.
//!
//! Every fallible function returns a [`TfStatus`]; on failure the message is
//! available from [`tf_last_error_message`] on the same thread. Models are
//! opaque handles released with [`tf_model_free`]. Output buffers are always
//! caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use tacforge::fit::{fit_mcif, FitConfig, ParamBounds};
use tacforge::interp::midpoint_interpolate;
use tacforge::kinetics::{simulate_scan, KineticParams, DEFAULT_DT_MIN, N_PARAMS};
use tacforge::seqnet::{load_checkpoint, predict_sequence, LstmModel};
use tacforge::tac::{Tac, TimeGrid};

/// Number of kinetic parameters in the forward model.
pub const TF_N_PARAMS: usize = 15;
/// Frames on the canonical acquisition grid.
pub const TF_CANONICAL_FRAMES: usize = 23;

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    TF_OK = 0,
    TF_NULL_POINTER = 1,
    TF_INVALID_ARGUMENT = 2,
    TF_BUFFER_TOO_SMALL = 3,
    TF_IO_ERROR = 4,
    TF_RUNTIME_ERROR = 5,
    TF_PANIC = 6,
}

/// Trained LSTM; opaque to C.
pub struct TfModel {
    inner: LstmModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(TfStatus, String);

fn fail<T>(status: TfStatus, msg: impl std::fmt::Display) -> Result<T, Failure> {
    Err(Failure(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TfStatus::TF_OK
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TfStatus::TF_PANIC
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(TfStatus::TF_NULL_POINTER, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(TfStatus::TF_NULL_POINTER, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(TfStatus::TF_INVALID_ARGUMENT, e.to_string())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Trainable parameter count of an LSTM with `d` inputs and `h` hidden units.
#[no_mangle]
pub extern "C" fn tf_count_params(d: usize, h: usize) -> u64 {
    tacforge::seqnet::count_params(d, h) as u64
}

/// Dynamic time warping distance between `a[0..n]` and `b[0..m]`.
///
/// # Safety
/// `a` and `b` must point to `n` and `m` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_dtw(a: *const f64, n: usize, b: *const f64, m: usize, out: *mut f64) -> TfStatus {
    guard(|| {
        let (a, b) = (slice(a, n, "a")?, slice(b, m, "b")?);
        if out.is_null() {
            return fail(TfStatus::TF_NULL_POINTER, "out is null");
        }
        *out = tacforge::evalkit::dtw(a, b).map_err(invalid)?;
        Ok(())
    })
}

/// Midpoint densification of one curve. Writes at most `capacity` samples to
/// `out_times`/`out_values` and the produced length to `out_len`. When the
/// buffers are too small, `out_len` receives the required length and
/// `TF_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// Input pointers must hold `n` doubles, output pointers `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_midpoint_interpolate(
    times: *const f64,
    values: *const f64,
    n: usize,
    cutoff_min: f64,
    out_times: *mut f64,
    out_values: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        let (t, v) = (slice(times, n, "times")?, slice(values, n, "values")?);
        if out_len.is_null() {
            return fail(TfStatus::TF_NULL_POINTER, "out_len is null");
        }
        let grid = Arc::new(TimeGrid::from_sample_times(t.to_vec()).map_err(invalid)?);
        let tac = Tac::new(grid, v.to_vec()).map_err(invalid)?;
        let out = midpoint_interpolate(&tac, cutoff_min).map_err(invalid)?;
        *out_len = out.len();
        if out.len() > capacity {
            return fail(
                TfStatus::TF_BUFFER_TOO_SMALL,
                format!("need {} samples, capacity {capacity}", out.len()),
            );
        }
        slice_mut(out_times, out.len(), "out_times")?.copy_from_slice(out.times());
        slice_mut(out_values, out.len(), "out_values")?.copy_from_slice(out.values());
        Ok(())
    })
}

/// Load a JSON checkpoint written by `tacforge train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tf_model_load(path: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(TfStatus::TF_NULL_POINTER, "path or out is null");
        }
        let path = CStr::from_ptr(path).to_str().map_err(invalid)?;
        let model = load_checkpoint(Path::new(path)).map_err(|e| {
            let status = if Path::new(path).is_file() {
                TfStatus::TF_INVALID_ARGUMENT
            } else {
                TfStatus::TF_IO_ERROR
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(TfModel { inner: model }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`tf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hidden units of a loaded model, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_hidden_units(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.weights.hidden_units())
}

/// Predict the MCIF for one normalized scan of `t` samples.
///
/// # Safety
/// `idif`, `myo` and `out` must each hold `t` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_model_predict(
    model: *const TfModel,
    idif: *const f64,
    myo: *const f64,
    t: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let model = match model.as_ref() {
            Some(m) => m,
            None => return fail(TfStatus::TF_NULL_POINTER, "model is null"),
        };
        if t == 0 {
            return fail(TfStatus::TF_INVALID_ARGUMENT, "empty sequence");
        }
        let (a, b) = (slice(idif, t, "idif")?, slice(myo, t, "myo")?);
        let seq = Array2::from_shape_fn((t, 2), |(k, c)| if c == 0 { a[k] } else { b[k] });
        let y = predict_sequence(&model.inner.weights, seq.view()).map_err(invalid)?;
        slice_mut(out, t, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

unsafe fn read_params(ptr: *const f64, what: &str) -> Result<KineticParams, Failure> {
    let s = slice(ptr, N_PARAMS, what)?;
    let mut x = [0.0; N_PARAMS];
    x.copy_from_slice(s);
    Ok(KineticParams::from_array(&x))
}

/// Simulate one scan on the canonical grid. `params` holds the 15 model
/// parameters in the order A1, A2, A3, lam1, lam2, lam3, tau, K1, k2, k3,
/// k4, r_b, r_m, s_bm, s_mb. Each output holds `TF_CANONICAL_FRAMES` values;
/// noise is applied to IDIF and myocardium only.
///
/// # Safety
/// `params` must hold 15 doubles and each output 23 doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_simulate_scan(
    params: *const f64,
    noise: f64,
    seed: u64,
    out_idif: *mut f64,
    out_myo: *mut f64,
    out_mcif: *mut f64,
) -> TfStatus {
    guard(|| {
        let p = read_params(params, "params")?;
        if !(noise >= 0.0) {
            return fail(TfStatus::TF_INVALID_ARGUMENT, "noise must be >= 0");
        }
        let grid = Arc::new(TimeGrid::canonical());
        let mut rng = tacforge::rng::stream(seed, &[]);
        let obs = simulate_scan(&p, &grid, DEFAULT_DT_MIN, noise, &mut rng).map_err(invalid)?;
        let n = TF_CANONICAL_FRAMES;
        slice_mut(out_idif, n, "out_idif")?.copy_from_slice(obs.idif.values());
        slice_mut(out_myo, n, "out_myo")?.copy_from_slice(obs.myo.values());
        slice_mut(out_mcif, n, "out_mcif")?.copy_from_slice(obs.mcif.values());
        Ok(())
    })
}

/// Fit the model to canonical-grid IDIF and myocardium curves within
/// `[lower, upper]` (15 values each, same order as [`tf_simulate_scan`];
/// equal bounds pin a parameter). Writes the fitted parameters, the fitted
/// MCIF (23 values) and the final cost.
///
/// # Safety
/// Curve pointers must hold 23 doubles, bound and parameter pointers 15.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_mcif(
    idif: *const f64,
    myo: *const f64,
    lower: *const f64,
    upper: *const f64,
    restarts: usize,
    max_iter: usize,
    seed: u64,
    out_params: *mut f64,
    out_mcif: *mut f64,
    out_cost: *mut f64,
) -> TfStatus {
    guard(|| {
        let n = TF_CANONICAL_FRAMES;
        let grid = Arc::new(TimeGrid::canonical());
        let idif = Tac::new(grid.clone(), slice(idif, n, "idif")?.to_vec()).map_err(invalid)?;
        let myo = Tac::new(grid, slice(myo, n, "myo")?.to_vec()).map_err(invalid)?;
        let bounds = ParamBounds::new(read_params(lower, "lower")?, read_params(upper, "upper")?);
        let mut cfg = FitConfig::new(bounds);
        cfg.restarts = restarts;
        cfg.max_iter = max_iter;
        cfg.seed = seed;
        if out_cost.is_null() {
            return fail(TfStatus::TF_NULL_POINTER, "out_cost is null");
        }
        let params = slice_mut(out_params, N_PARAMS, "out_params")?;
        let mcif = slice_mut(out_mcif, n, "out_mcif")?;
        let r = fit_mcif(&idif, &myo, &cfg).map_err(invalid)?;
        params.copy_from_slice(&r.params.to_array());
        mcif.copy_from_slice(r.mcif_fitted.values());
        *out_cost = r.cost();
        Ok(())
    })
}
