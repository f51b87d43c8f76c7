//! C ABI over the `hjl` core.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible call returns an [`HjlStatus`] code and writes results
//! through out-pointers; the message of the most recent failure on the
//! calling thread is available from [`hjl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hjl::error::Error;
use hjl::geometry::{BoxDomain, HPoint};
use hjl::kernel::KernelParams;
use hjl::nonlocal::{self, ProfileFunction};
use hjl::quad::QuadSpec;
use hjl::sim::{Functional, SimConfig, Simulator};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HjlStatus {
    Ok = 0,
    NullPointer = 1,
    ConstraintViolation = 2,
    CoincidentPoints = 3,
    EnvelopeSearchFailure = 4,
    ToleranceNotMet = 5,
    ParameterOutOfRange = 6,
    NonIntegrableProfile = 7,
    EmptyFunction = 8,
    DegenerateSample = 9,
    DivergentIntegrand = 10,
    Usage = 11,
    Io = 12,
    Panic = 13,
}

impl From<&Error> for HjlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ConstraintViolation(_) => HjlStatus::ConstraintViolation,
            Error::CoincidentPoints => HjlStatus::CoincidentPoints,
            Error::EnvelopeSearchFailure(_) => HjlStatus::EnvelopeSearchFailure,
            Error::ToleranceNotMet { .. } => HjlStatus::ToleranceNotMet,
            Error::ParameterOutOfRange(_) => HjlStatus::ParameterOutOfRange,
            Error::NonIntegrableProfile(_) => HjlStatus::NonIntegrableProfile,
            Error::EmptyFunction => HjlStatus::EmptyFunction,
            Error::DegenerateSample(_) => HjlStatus::DegenerateSample,
            Error::DivergentIntegrand(_) => HjlStatus::DivergentIntegrand,
            Error::Usage(_) => HjlStatus::Usage,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => HjlStatus::Io,
        }
    }
}

/// Kernel parameters `(alpha, d, beta)`.
pub struct HjlKernel {
    params: KernelParams,
}

/// Truncated jump simulator bound to one kernel.
pub struct HjlSimulator {
    sim: Simulator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), HjlStatus>>(f: F) -> HjlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HjlStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HjlStatus::Panic
        }
    }
}

fn check<T>(r: hjl::error::Result<T>) -> Result<T, HjlStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        HjlStatus::from(&e)
    })
}

fn null() -> HjlStatus {
    set_error("null pointer argument".into());
    HjlStatus::NullPointer
}

unsafe fn point<'a>(p: *const f64, d: usize) -> Result<HPoint, HjlStatus> {
    if p.is_null() {
        return Err(null());
    }
    check(HPoint::new(slice::from_raw_parts(p, d)))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, HjlStatus> {
    p.as_mut().ok_or_else(null)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hjl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hjl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a kernel. `beta` points to four doubles.
///
/// # Safety
/// `beta` must point to four readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_new(alpha: f64, d: usize, beta: *const f64, out_kernel: *mut *mut HjlKernel) -> HjlStatus {
    guard(|| {
        if beta.is_null() {
            return Err(null());
        }
        let out_kernel = out(out_kernel)?;
        let b = slice::from_raw_parts(beta, 4);
        let params = check(KernelParams::new(alpha, d, [b[0], b[1], b[2], b[3]]).validate())?;
        *out_kernel = Box::into_raw(Box::new(HjlKernel { params }));
        Ok(())
    })
}

/// Releases a kernel. Null is ignored.
///
/// # Safety
/// `k` must come from [`hjl_kernel_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_free(k: *mut HjlKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Dimension of the kernel's half-space.
///
/// # Safety
/// `k` must be a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_dim(k: *const HjlKernel) -> usize {
    k.as_ref().map_or(0, |k| k.params.d)
}

/// Boundary function `B(x, y)` for points of length `d`.
///
/// # Safety
/// `x` and `y` must point to `d` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_model_b(k: *const HjlKernel, x: *const f64, y: *const f64, value: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        let (x, y) = (point(x, k.params.d)?, point(y, k.params.d)?);
        if x == y {
            return check(Err(Error::CoincidentPoints));
        }
        *out(value)? = k.params.model_b(&x, &y);
        Ok(())
    })
}

/// Jump kernel `J(x, y)`.
///
/// # Safety
/// As for [`hjl_kernel_model_b`].
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_jump(k: *const HjlKernel, x: *const f64, y: *const f64, value: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        let (x, y) = (point(x, k.params.d)?, point(y, k.params.d)?);
        *out(value)? = check(k.params.jump_kernel(&x, &y))?;
        Ok(())
    })
}

/// Upper bound `M_B` of `B`.
///
/// # Safety
/// `k` must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_kernel_envelope(k: *const HjlKernel, value: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        *out(value)? = check(k.params.kernel_envelope())?;
        Ok(())
    })
}

/// Constant `C(alpha, p)` with `L g_p = C g_{p - alpha}`.
///
/// # Safety
/// `k` must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_constant_c(k: *const HjlKernel, p: f64, value: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        *out(value)? = check(nonlocal::constant_c(&k.params, p))?;
        Ok(())
    })
}

/// Principal-value operator applied to `x_d^p` at `x`.
///
/// # Safety
/// `x` must point to `d` doubles and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_pv_apply_power(k: *const HjlKernel, p: f64, x: *const f64, value: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        let x = point(x, k.params.d)?;
        let r = check(nonlocal::pv_apply(&k.params, &ProfileFunction::power(p), &x, &QuadSpec::operator()))?;
        *out(value)? = r.value;
        Ok(())
    })
}

/// Certified Hardy constant for `d = 1` and the exponent that attains it.
///
/// # Safety
/// `k` must be live; `bound` and `p_star` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_hardy_bound(k: *const HjlKernel, bound: *mut f64, p_star: *mut f64) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        let h = check(nonlocal::hardy_bound(&k.params))?;
        *out(bound)? = h.bound;
        *out(p_star)? = h.p_star;
        Ok(())
    })
}

/// Creates a simulator with truncation fraction `delta`, absorption height
/// `eta_abs` and base seed `seed`; other settings take their defaults.
///
/// # Safety
/// `k` must be live and `out_sim` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_simulator_new(
    k: *const HjlKernel,
    delta: f64,
    eta_abs: f64,
    seed: u64,
    out_sim: *mut *mut HjlSimulator,
) -> HjlStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(null)?;
        let out_sim = out(out_sim)?;
        let cfg = SimConfig {
            delta,
            eta_abs,
            seed,
            ..SimConfig::default()
        };
        let sim = check(Simulator::new(&k.params, &cfg))?;
        *out_sim = Box::into_raw(Box::new(HjlSimulator { sim }));
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `s` must come from [`hjl_simulator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjl_simulator_free(s: *mut HjlSimulator) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Mean exit time from the strip `U(r)` starting at `x0`, with its
/// standard error.
///
/// # Safety
/// `x0` must point to `d` doubles; `mean` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_simulator_exit_time(
    s: *const HjlSimulator,
    x0: *const f64,
    r: f64,
    n_paths: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> HjlStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        let x0 = point(x0, s.sim.params().d)?;
        let e = check(s.sim.estimate(&x0, &BoxDomain::strip(r), &Functional::ExitTime, n_paths))?;
        *out(mean)? = e.mean;
        *out(std_error)? = e.std_error;
        Ok(())
    })
}

/// Fraction of half-space paths from `x0` that end absorbed at the
/// boundary.
///
/// # Safety
/// `x0` must point to `d` doubles; `fraction` writable.
#[no_mangle]
pub unsafe extern "C" fn hjl_simulator_absorbed_fraction(
    s: *const HjlSimulator,
    x0: *const f64,
    n_paths: u64,
    fraction: *mut f64,
) -> HjlStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        let x0 = point(x0, s.sim.params().d)?;
        *out(fraction)? = check(hjl::potential::absorbed_fraction(&s.sim, &x0, n_paths))?;
        Ok(())
    })
}
