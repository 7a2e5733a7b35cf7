//! C ABI for the `dpre` toolkit.
//!
//! Every fallible function returns a [`DpreStatus`]; on failure the message
//! is available from [`dpre_last_error`] on the same thread until the next
//! call. Models and fields are opaque handles released with the matching
//! `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpre::chaos::{self, ChaosParams};
use dpre::env::Environment;
use dpre::{estimator, moments, partition, EnvironmentField, EnvironmentModel, Error, LatticePoint};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpreStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ResourceCap = 3,
    Precondition = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Disorder law handle.
pub struct DpreModel(EnvironmentModel);

/// Environment realization handle.
pub struct DpreField(EnvironmentField);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DpreStatus {
    match e {
        Error::Resource { .. } => DpreStatus::ResourceCap,
        Error::Precondition(_) | Error::WindowViolation { .. } | Error::InfeasibleBlocks { .. } => {
            DpreStatus::Precondition
        }
        Error::Degenerate(_) | Error::InsufficientData { .. } => DpreStatus::Numerical,
        Error::Io(_) | Error::Format(_) => DpreStatus::Io,
        _ => DpreStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (DpreStatus, String)>>(f: F) -> DpreStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DpreStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            DpreStatus::Panic
        }
    }
}

fn lift<T>(r: dpre::Result<T>) -> Result<T, (DpreStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (DpreStatus, String) {
    (DpreStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DpreStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (DpreStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dpre_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpre_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Worker threads for Monte Carlo batches (0 = one per core).
#[no_mangle]
pub extern "C" fn dpre_set_workers(n: usize) {
    dpre::stats::set_workers(n);
}

/// Creates a model from a JSON fragment such as `{"family":"gaussian-unit"}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpre_model_from_json(json: *const c_char, out: *mut *mut DpreModel) -> DpreStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (DpreStatus::InvalidArgument, e.to_string()))?;
        let m = lift(EnvironmentModel::from_json(s))?;
        *out = Box::into_raw(Box::new(DpreModel(m)));
        Ok(())
    })
}

/// Standard Gaussian disorder. Never fails; free with [`dpre_model_free`].
#[no_mangle]
pub extern "C" fn dpre_model_gaussian() -> *mut DpreModel {
    Box::into_raw(Box::new(DpreModel(EnvironmentModel::GaussianUnit)))
}

/// ±1 disorder. Never fails; free with [`dpre_model_free`].
#[no_mangle]
pub extern "C" fn dpre_model_rademacher() -> *mut DpreModel {
    Box::into_raw(Box::new(DpreModel(EnvironmentModel::Rademacher)))
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpre_model_free(model: *mut DpreModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// λ(β) = log Q[e^{βη}].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_model_cumulant(model: *const DpreModel, beta: f64, out: *mut f64) -> DpreStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        *as_out(out, "out")? = m.0.cumulant(beta);
        Ok(())
    })
}

/// Exact Q[W_n²(β)] for the d-dimensional walk.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_second_moment_exact(
    model: *const DpreModel,
    beta: f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> DpreStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        *as_out(out, "out")? = lift(moments::second_moment_exact(&m.0, beta, n, d))?;
        Ok(())
    })
}

/// An environment realization on times 1..=t_max and sites with
/// |x_k| ≤ radius.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_field_new(
    model: *const DpreModel,
    seed: u64,
    d: usize,
    t_max: u32,
    radius: i32,
    out: *mut *mut DpreField,
) -> DpreStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        *out = ptr::null_mut();
        let m = as_ref(model, "model")?.0.clone();
        let field = lift(EnvironmentField::centered(m, seed, d, t_max, radius))?;
        *out = Box::into_raw(Box::new(DpreField(field)));
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpre_field_free(field: *mut DpreField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// log W_n(β) for the walk started at the origin.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_log_partition(field: *const DpreField, beta: f64, n: usize, out: *mut f64) -> DpreStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        let o = LatticePoint::origin(f.0.dim());
        *as_out(out, "out")? = lift(partition::log_partition_value(&f.0, f.0.model(), beta, n, &o))?;
        Ok(())
    })
}

/// Q̂[log W_n]/n at the largest horizon of `schedule` over `m` environments.
///
/// # Safety
/// `schedule` must point to `len` values; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_free_energy_lower(
    model: *const DpreModel,
    beta: f64,
    d: usize,
    schedule: *const usize,
    len: usize,
    m: usize,
    seed: u64,
    p_lower: *mut f64,
    se: *mut f64,
) -> DpreStatus {
    guard(|| {
        let md = as_ref(model, "model")?;
        if schedule.is_null() {
            return Err(null("schedule"));
        }
        let sched = std::slice::from_raw_parts(schedule, len);
        let p = lift(estimator::free_energy_lower(&md.0, beta, d, sched, m, seed))?;
        *as_out(p_lower, "p_lower")? = p.p_lower;
        *as_out(se, "se")? = p.p_lower_se;
        Ok(())
    })
}

/// Writes `m` samples of A^{q,N}_0 (γ_N = γ̂/√log N) into `out`.
///
/// # Safety
/// `out` must have room for `m` values.
#[no_mangle]
pub unsafe extern "C" fn dpre_chaos_samples(
    model: *const DpreModel,
    q: usize,
    gamma_hat: f64,
    n: usize,
    d: usize,
    m: usize,
    seed: u64,
    out: *mut f64,
) -> DpreStatus {
    guard(|| {
        let md = as_ref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = lift(ChaosParams::new(q, gamma_hat, n, d))?;
        let xs = lift(chaos::chaos_samples(&md.0, &params, m, seed))?;
        std::slice::from_raw_parts_mut(out, m).copy_from_slice(&xs);
        Ok(())
    })
}

/// Exact Q[(A^{q,N})²].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_chaos_second_moment_exact(
    model: *const DpreModel,
    q: usize,
    gamma_hat: f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> DpreStatus {
    guard(|| {
        let md = as_ref(model, "model")?;
        let params = lift(ChaosParams::new(q, gamma_hat, n, d))?;
        *as_out(out, "out")? = lift(chaos::chaos_second_moment_exact(&md.0, &params))?;
        Ok(())
    })
}

/// β = C1·(log N)^{−(q−1)/(2q)}.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpre_beta_of_n(c1: f64, q: usize, n: usize, out: *mut f64) -> DpreStatus {
    guard(|| {
        *as_out(out, "out")? = lift(estimator::beta_of_n(c1, q, n))?;
        Ok(())
    })
}
