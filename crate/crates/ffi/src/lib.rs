//! C ABI over `ftr-core`. All quantities are SI. Every call returns an `FtrStatus`;
//! on failure the message is kept per thread and read with `ftr_last_error`.
//! Handles are created by `*_new` and released by the matching `*_free`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ftr_core::ftr::{omega_at, CpwParams, FrequencyMode, FtrParams};
use ftr_core::magnetics::{neumann_mutual_tol, square_coil_self_inductance, PolylineLoop};
use num_complex::Complex64;
use ftr_core::s21::{correct_background, duffing_roots, fit_linear_resonance, ComplexTrace};
use ftr_core::squid::{solve_principal, squid_inductance, SquidParams};
use ftr_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtrStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Divergence = 3,
    NoSolution = 4,
    Solver = 5,
    Precondition = 6,
    Geometry = 7,
    Fit = 8,
    Calibration = 9,
    Config = 10,
    Io = 11,
    Panic = 12,
}

impl From<&Error> for FtrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => FtrStatus::Domain,
            Error::Divergence(_) => FtrStatus::Divergence,
            Error::NoSolution(_) => FtrStatus::NoSolution,
            Error::Solver(_) | Error::Quadrature { .. } => FtrStatus::Solver,
            Error::Precondition(_) => FtrStatus::Precondition,
            Error::Geometry(_) => FtrStatus::Geometry,
            Error::Fit { .. } | Error::NoResonance(_) | Error::Overcoupled(_) => FtrStatus::Fit,
            Error::Calibration(_) => FtrStatus::Calibration,
            Error::Config { .. } | Error::Format(_) => FtrStatus::Config,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => FtrStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> ftr_core::Result<()>) -> FtrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FtrStatus::Ok
        }
        Ok(Err(e)) => {
            let s = FtrStatus::from(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            FtrStatus::Panic
        }
    }
}

macro_rules! nonnull {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(format!("{} is null", stringify!($p)));
            return FtrStatus::NullPointer;
        })+
    };
}

/// Copies the calling thread's last error message (NUL-terminated, truncated to `len`)
/// into `buf` and returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ftr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ftr_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    V.as_ptr()
}

/// Opaque flux-tunable resonator model.
pub struct FtrDevice {
    params: FtrParams,
}

/// Creates a device from SQUID (I0, alpha, Lg) and resonator (length, modal L_r, C_r) values.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_new(
    i0: f64,
    alpha: f64,
    lg: f64,
    length: f64,
    l_r: f64,
    c_r: f64,
    scaling_a: f64,
    out: *mut *mut FtrDevice,
) -> FtrStatus {
    nonnull!(out);
    guard(|| {
        if !(scaling_a > 0.0) {
            return Err(Error::Domain(format!("scaling factor must be positive, got {scaling_a}")));
        }
        let params = FtrParams {
            cpw: CpwParams::from_modal(length, l_r, c_r)?,
            squid: SquidParams::inductive(i0, alpha, lg)?,
            scaling_a,
            include_cs: false,
        };
        *out = Box::into_raw(Box::new(FtrDevice { params }));
        Ok(())
    })
}

/// Releases a device; null is ignored.
///
/// # Safety
/// `dev` must come from `ftr_device_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_free(dev: *mut FtrDevice) {
    if !dev.is_null() {
        drop(Box::from_raw(dev));
    }
}

/// # Safety
/// `dev` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_beta_l(dev: *const FtrDevice, out: *mut f64) -> FtrStatus {
    nonnull!(dev, out);
    guard(|| {
        *out = (*dev).params.squid.beta_l();
        Ok(())
    })
}

/// Bare resonator angular frequency omega0 (rad/s).
///
/// # Safety
/// `dev` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_omega0(dev: *const FtrDevice, out: *mut f64) -> FtrStatus {
    nonnull!(dev, out);
    guard(|| {
        *out = (*dev).params.cpw.omega0();
        Ok(())
    })
}

/// Resonance angular frequency (rad/s) at applied flux `phi_e` (Wb).
/// `exact` selects the transcendental frequency equation.
///
/// # Safety
/// `dev` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_omega(dev: *const FtrDevice, phi_e: f64, exact: bool, out: *mut f64) -> FtrStatus {
    nonnull!(dev, out);
    let mode = if exact { FrequencyMode::Exact } else { FrequencyMode::Approx };
    guard(|| {
        *out = omega_at(&(*dev).params, phi_e, mode)?;
        Ok(())
    })
}

/// Evaluates `n` frequencies; stops at the first failing point and reports it.
///
/// # Safety
/// `phi_e` and `omega_out` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ftr_device_tuning(
    dev: *const FtrDevice,
    phi_e: *const f64,
    n: usize,
    exact: bool,
    omega_out: *mut f64,
) -> FtrStatus {
    nonnull!(dev, phi_e, omega_out);
    let mode = if exact { FrequencyMode::Exact } else { FrequencyMode::Approx };
    guard(|| {
        let xs = std::slice::from_raw_parts(phi_e, n);
        let ys = std::slice::from_raw_parts_mut(omega_out, n);
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            *y = omega_at(&(*dev).params, *x, mode)?;
        }
        Ok(())
    })
}

/// SQUID state on the zero-flux-connected branch.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FtrScreening {
    /// Loop flux (Wb).
    pub phi_s: f64,
    /// Circulating current (A).
    pub i_circ: f64,
    /// SQUID inductance (H); infinite where it diverges.
    pub ls: f64,
    pub winding: i64,
    pub multivalued: bool,
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_squid_solve(i0: f64, alpha: f64, lg: f64, phi_e: f64, out: *mut FtrScreening) -> FtrStatus {
    nonnull!(out);
    guard(|| {
        let p = SquidParams::inductive(i0, alpha, lg)?;
        let pt = solve_principal(phi_e, &p)?;
        let ls = match squid_inductance(&p, &pt) {
            Ok(ind) => ind.ls,
            Err(Error::Divergence(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        *out = FtrScreening { phi_s: pt.phi_s, i_circ: pt.i_circ, ls, winding: pt.m, multivalued: pt.multivalued };
        Ok(())
    })
}

/// Mutual inductance (H) of two coaxial squares of sides `side_a` (z = 0) and `side_b` (z = h).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_mutual_squares(side_a: f64, side_b: f64, h: f64, rel_tol: f64, out: *mut f64) -> FtrStatus {
    nonnull!(out);
    guard(|| {
        let a = PolylineLoop::square(side_a, 0.0, 0.0, 0.0)?;
        let b = PolylineLoop::square(side_b, 0.0, 0.0, h)?;
        *out = neumann_mutual_tol(&a, &b, rel_tol)?;
        Ok(())
    })
}

/// Mutual inductance (H) of two closed polylines given as xyz triples (m).
///
/// # Safety
/// `a` must hold `3 * na` values and `b` `3 * nb` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_mutual_polylines(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    rel_tol: f64,
    out: *mut f64,
) -> FtrStatus {
    nonnull!(a, b, out);
    guard(|| {
        let to_loop = |p: *const f64, n: usize| {
            let v = std::slice::from_raw_parts(p, 3 * n);
            PolylineLoop::new(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        };
        *out = neumann_mutual_tol(&to_loop(a, na)?, &to_loop(b, nb)?, rel_tol)?;
        Ok(())
    })
}

/// Self-inductance (H) of a square coil of side `side` and wire width `width`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_square_coil_inductance(side: f64, width: f64, out: *mut f64) -> FtrStatus {
    nonnull!(out);
    guard(|| {
        *out = square_coil_self_inductance(side, width)?;
        Ok(())
    })
}

/// Steady-state photon numbers of the driven Kerr resonator (up to 3, ascending).
/// `k` is the Kerr coefficient in the cubic's own sign convention.
///
/// # Safety
/// `roots` must hold 3 values, `stable` 3 flags, `count` one value.
#[no_mangle]
pub unsafe extern "C" fn ftr_duffing_roots(
    delta: f64,
    kappa: f64,
    kappa_c: f64,
    k: f64,
    drive: f64,
    roots: *mut f64,
    stable: *mut bool,
    count: *mut usize,
) -> FtrStatus {
    nonnull!(roots, stable, count);
    guard(|| {
        let r = duffing_roots(delta, kappa, kappa_c, k, drive)?;
        for (j, root) in r.iter().take(3).enumerate() {
            *roots.add(j) = root.n;
            *stable.add(j) = root.stable;
        }
        *count = r.len().min(3);
        Ok(())
    })
}

/// Opaque complex transmission trace.
pub struct FtrTrace {
    trace: ComplexTrace,
}

/// # Safety
/// `freqs`, `re` and `im` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_trace_new(
    freqs: *const f64,
    re: *const f64,
    im: *const f64,
    n: usize,
    out: *mut *mut FtrTrace,
) -> FtrStatus {
    nonnull!(freqs, re, im, out);
    guard(|| {
        let f = std::slice::from_raw_parts(freqs, n).to_vec();
        let (r, i) = (std::slice::from_raw_parts(re, n), std::slice::from_raw_parts(im, n));
        let s = r.iter().zip(i).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let trace = ComplexTrace::new(f, s)?;
        *out = Box::into_raw(Box::new(FtrTrace { trace }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from `ftr_trace_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ftr_trace_free(t: *mut FtrTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FtrLinearFit {
    pub f_r: f64,
    pub q_l: f64,
    pub q_c_abs: f64,
    pub q_c_eff: f64,
    pub q_i: f64,
    pub phi: f64,
    pub rms_residual: f64,
    pub overcoupled: bool,
}

/// Circle fit of a notch resonance, optionally after edge-based background removal.
///
/// # Safety
/// `t` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ftr_fit_linear(t: *const FtrTrace, background: bool, out: *mut FtrLinearFit) -> FtrStatus {
    nonnull!(t, out);
    guard(|| {
        let trace = &(*t).trace;
        let fit = if background {
            fit_linear_resonance(&correct_background(trace)?.trace)?
        } else {
            fit_linear_resonance(trace)?
        };
        *out = FtrLinearFit {
            f_r: fit.f_r,
            q_l: fit.q_l,
            q_c_abs: fit.q_c_abs,
            q_c_eff: fit.q_c_eff,
            q_i: fit.q_i,
            phi: fit.phi,
            rms_residual: fit.rms_residual,
            overcoupled: fit.overcoupled,
        };
        Ok(())
    })
}
