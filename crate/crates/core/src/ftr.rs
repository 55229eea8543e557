//! Quarter-wave CPW resonator terminated by a dc SQUID: modal parameters,
//! resonance frequency vs applied flux, Kerr shift and tuning-curve fits.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::constants::FLUX_QUANTUM;
use crate::error::{Error, Result};
use crate::lsq::{self, LmOptions};
use crate::magnetics::FluxCalibration;
use crate::roots;
use crate::squid::{self, SquidInductances, SquidParams};

/// Step used for the responsivity central difference.
pub const RESPONSIVITY_STEP: f64 = FLUX_QUANTUM / 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpwParams {
    /// Resonator length (m).
    pub length: f64,
    /// Inductance per unit length (H/m).
    pub l_per_len: f64,
    /// Capacitance per unit length (F/m).
    pub c_per_len: f64,
}

impl CpwParams {
    pub fn new(length: f64, l_per_len: f64, c_per_len: f64) -> Result<Self> {
        if !(length > 0.0 && l_per_len > 0.0 && c_per_len > 0.0) {
            return Err(Error::domain("CPW length and per-length parameters must be positive"));
        }
        Ok(CpwParams { length, l_per_len, c_per_len })
    }

    /// CPW from its modal lumped parameters and length.
    pub fn from_modal(length: f64, l_r: f64, c_r: f64) -> Result<Self> {
        Self::new(length, PI * PI * l_r / (8.0 * length), 2.0 * c_r / length)
    }

    pub fn phase_velocity(&self) -> f64 {
        1.0 / (self.l_per_len * self.c_per_len).sqrt()
    }

    pub fn wavenumber(&self, omega: f64) -> f64 {
        omega * (self.l_per_len * self.c_per_len).sqrt()
    }

    /// Bare quarter-wave fundamental (rad/s).
    pub fn omega0(&self) -> f64 {
        PI / (2.0 * self.length * (self.l_per_len * self.c_per_len).sqrt())
    }

    /// Bare quarter-wave mode n (n = 0 is the fundamental).
    pub fn omega_n(&self, n: u32) -> f64 {
        (2 * n + 1) as f64 * self.omega0()
    }

    /// Total line inductance l * L_l.
    pub fn total_inductance(&self) -> f64 {
        self.length * self.l_per_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalParams {
    pub l_r: f64,
    pub c_r: f64,
    pub omega0: f64,
}

pub fn modal_parameters(cpw: &CpwParams) -> ModalParams {
    let l_r = 8.0 / (PI * PI) * cpw.l_per_len * cpw.length;
    let c_r = 0.5 * cpw.c_per_len * cpw.length;
    ModalParams { l_r, c_r, omega0: 1.0 / (l_r * c_r).sqrt() }
}

/// gamma = Ls / (l L_l).
pub fn participation_ratio(ls: f64, cpw: &CpwParams) -> Result<f64> {
    if ls < 0.0 {
        return Err(Error::domain(format!("SQUID inductance must be >= 0, got {ls:e}")));
    }
    Ok(ls / cpw.total_inductance())
}

pub fn frequency_approx(omega0: f64, gamma: f64, a: f64) -> Result<f64> {
    if !(gamma > -1.0) {
        return Err(Error::domain(format!("participation ratio must exceed -1, got {gamma}")));
    }
    Ok(a * omega0 / (1.0 + gamma))
}

/// Fundamental root of tan(kl) = (L_l/(k Ls))(1 - w^2 Cs Ls), solved for theta = kl in (0, pi/2).
pub fn frequency_exact(cpw: &CpwParams, ls: f64, cs: f64, with_capacitance: bool) -> Result<f64> {
    let w0 = cpw.omega0();
    if ls == 0.0 {
        return Ok(w0);
    }
    if !(ls > 0.0) {
        return Err(Error::Solver(format!("no fundamental root for Ls = {ls:e}")));
    }
    let gamma = ls / cpw.total_inductance();
    let cs = if with_capacitance { cs } else { 0.0 };
    // omega = theta * v / l = (2 w0 / pi) theta
    let omega_of = |t: f64| 2.0 * w0 * t / PI;
    let f = |t: f64| {
        let w = omega_of(t);
        t * t.sin() * gamma - t.cos() * (1.0 - w * w * cs * ls)
    };
    if f(0.0).signum() == f(FRAC_PI_2).signum() {
        return Err(Error::Solver("no bracket for the fundamental mode in (0, pi/2)".into()));
    }
    let t = roots::bisect(f, 0.0, FRAC_PI_2)?;
    let res = f(t).abs() / (t * gamma).max(1.0);
    if !(res < 1e-12) {
        return Err(Error::Solver(format!("eigenfrequency residual {res:e}")));
    }
    Ok(omega_of(t))
}

/// Mean-junction plasma frequency and SQUID LC frequency (rad/s).
pub fn validity_frequencies(ind: &SquidInductances, p: &SquidParams) -> Result<(f64, f64)> {
    if !(p.cj1 > 0.0 && p.cj2 > 0.0) {
        return Err(Error::domain("junction capacitances must be positive"));
    }
    let lj = 2.0 * ind.lj1 * ind.lj2 / (ind.lj1 + ind.lj2);
    let cj = 0.5 * (p.cj1 + p.cj2);
    Ok((1.0 / (lj * cj).sqrt(), 1.0 / (ind.ls * p.cs()).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtrParams {
    pub cpw: CpwParams,
    pub squid: SquidParams,
    pub scaling_a: f64,
    pub include_cs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FrequencyMode {
    #[default]
    Approx,
    Exact,
}

/// Resonance frequency (rad/s) at applied flux `phi_e` on the zero-flux-connected branch.
pub fn omega_at(ftr: &FtrParams, phi_e: f64, mode: FrequencyMode) -> Result<f64> {
    let (varphi, _) = squid::principal_loop_phase(phi_e, &ftr.squid)?;
    let phi_l = squid::terminal_phase(0.0, varphi, squid::Branch::Zero, &ftr.squid)?;
    let p = &ftr.squid;
    let ind = squid::squid_inductance_from(p.ic1(), p.ic2(), p.lg, phi_l + varphi, phi_l - varphi)?;
    omega_from_ls(ftr, ind.ls, mode)
}

fn omega_from_ls(ftr: &FtrParams, ls: f64, mode: FrequencyMode) -> Result<f64> {
    match mode {
        FrequencyMode::Approx => {
            let gamma = ls / ftr.cpw.total_inductance();
            frequency_approx(ftr.cpw.omega0(), gamma, ftr.scaling_a)
        }
        FrequencyMode::Exact => {
            Ok(ftr.scaling_a * frequency_exact(&ftr.cpw, ls, ftr.squid.cs(), ftr.include_cs)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub phi_e: f64,
    pub phi_s: f64,
    pub ls: f64,
    pub gamma: f64,
    pub omega_r: f64,
    /// d omega_r / d Phi_e (rad/s/Wb); NaN next to divergent points.
    pub responsivity: f64,
    pub m: i64,
    pub branch_n: u8,
    pub multivalued: bool,
    /// SQUID inductance diverges here (cos delta -> 0); omega_r is reported as 0.
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    pub points: Vec<TuningPoint>,
}

impl TuningCurve {
    /// Largest |responsivity| over finite entries (rad/s/Wb).
    pub fn max_responsivity(&self) -> f64 {
        self.points.iter().map(|p| p.responsivity.abs()).filter(|v| v.is_finite()).fold(0.0, f64::max)
    }
}

fn omega_or_divergent(ftr: &FtrParams, phi_e: f64, mode: FrequencyMode) -> Result<Option<f64>> {
    match omega_at(ftr, phi_e, mode) {
        Ok(w) => Ok(Some(w)),
        Err(Error::Divergence(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn tuning_curve(ftr: &FtrParams, grid: &[f64], mode: FrequencyMode) -> Result<TuningCurve> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("applied-flux grid must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &phi_e in grid {
        let pt = squid::solve_principal(phi_e, &ftr.squid)?;
        let h = RESPONSIVITY_STEP;
        let (ls, gamma, omega, divergent) = match squid::squid_inductance(&ftr.squid, &pt) {
            Ok(ind) => {
                let w = omega_from_ls(ftr, ind.ls, mode)?;
                (ind.ls, ind.ls / ftr.cpw.total_inductance(), w, false)
            }
            Err(Error::Divergence(_)) => (f64::INFINITY, f64::INFINITY, 0.0, true),
            Err(e) => return Err(e),
        };
        let up = omega_or_divergent(ftr, phi_e + h, mode)?;
        let dn = omega_or_divergent(ftr, phi_e - h, mode)?;
        let responsivity = match (up, dn, divergent) {
            (Some(a), Some(b), false) => (a - b) / (2.0 * h),
            _ => f64::NAN,
        };
        points.push(TuningPoint {
            phi_e,
            phi_s: pt.phi_s,
            ls,
            gamma,
            omega_r: omega,
            responsivity,
            m: pt.m,
            branch_n: pt.branch_n,
            multivalued: pt.multivalued,
            divergent,
        });
    }
    Ok(TuningCurve { points })
}

/// Uniform grid of `n` points per flux quantum over `[start, start + periods)` Phi0.
pub fn flux_grid(start: f64, periods: f64, n_per_period: usize) -> Vec<f64> {
    let n = (periods * n_per_period as f64).round() as usize;
    (0..=n).map(|k| FLUX_QUANTUM * (start + k as f64 / n_per_period as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrModel {
    pub omega_r0: f64,
    /// Kerr coefficient (rad/s per photon).
    pub k: f64,
}

pub fn kerr_shift(model: &KerrModel, n_c: f64) -> Result<f64> {
    if !(n_c >= 0.0) {
        return Err(Error::domain(format!("photon number must be >= 0, got {n_c}")));
    }
    Ok(model.omega_r0 - model.k * n_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningFitGuess {
    pub ftr: FtrParams,
    pub cal: FluxCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningFit {
    pub scaling_a: f64,
    pub alpha: f64,
    pub i0: f64,
    pub lg: f64,
    pub i_off: f64,
    pub i_phi0: f64,
    pub beta_l: f64,
    pub rms_hz: f64,
    pub iterations: usize,
    /// Names of parameters that ended at a bound of their transform.
    pub at_bound: Vec<String>,
    pub residuals_hz: Vec<f64>,
}

impl TuningFit {
    pub fn ftr(&self, template: &FtrParams) -> FtrParams {
        FtrParams {
            squid: SquidParams { i0: self.i0, alpha: self.alpha, lg: self.lg, ..template.squid },
            scaling_a: self.scaling_a,
            ..*template
        }
    }

    pub fn calibration(&self) -> FluxCalibration {
        FluxCalibration { i_off: self.i_off, i_phi0: self.i_phi0 }
    }
}

const FIT_SCALE_HZ: f64 = 1e6;

/// Fits (A, alpha, I0, Lg, I_off, I_Phi0) to (input current, frequency in Hz) pairs.
pub fn fit_tuning_curve(data: &[(f64, f64)], guess: &TuningFitGuess) -> Result<TuningFit> {
    if data.len() < 8 {
        return Err(Error::Precondition(format!("need at least 8 points, got {}", data.len())));
    }
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d.0), b.max(d.0)));
    if hi - lo < 0.5 * guess.cal.i_phi0.abs() {
        return Err(Error::Precondition("data must span at least half a flux period".into()));
    }
    let template = guess.ftr;
    let off_scale = guess.cal.i_phi0.abs();
    let decode = |x: &[f64]| {
        (x[0].exp(), lsq::logistic(x[1]), x[2].exp(), x[3].exp(), x[4] * off_scale, x[5].exp())
    };
    let model = |x: &[f64]| -> Result<Vec<f64>> {
        let (a, alpha, i0, lg, i_off, i_phi0) = decode(x);
        let ftr = FtrParams {
            squid: SquidParams { i0, alpha, lg, ..template.squid },
            scaling_a: a,
            ..template
        };
        data.iter()
            .map(|&(i_in, f)| {
                let phi_e = FLUX_QUANTUM * (i_in - i_off) / i_phi0;
                Ok((omega_at(&ftr, phi_e, FrequencyMode::Approx)? / (2.0 * PI) - f) / FIT_SCALE_HZ)
            })
            .collect()
    };
    // LM over the parameters flagged in `free`, the rest held at `base`
    let partial = |base: &[f64; 6], free: &[bool; 6]| -> Result<lsq::LmResult> {
        let idx: Vec<usize> = (0..6).filter(|&k| free[k]).collect();
        let expand = |y: &[f64]| {
            let mut x = *base;
            for (j, &k) in idx.iter().enumerate() {
                x[k] = y[j];
            }
            x
        };
        let y0: Vec<f64> = idx.iter().map(|&k| base[k]).collect();
        let mut r = lsq::levenberg_marquardt(|y: &[f64]| model(&expand(y)), &y0, &LmOptions::default())?;
        r.x = expand(&r.x).to_vec();
        Ok(r)
    };
    let g = &guess.ftr.squid;
    let x0 = [
        guess.ftr.scaling_a.ln(),
        lsq::logit(g.alpha.clamp(1e-3, 0.999)),
        g.i0.ln(),
        g.lg.max(1e-15).ln(),
        guess.cal.i_off / off_scale,
        guess.cal.i_phi0.ln(),
    ];
    // candidates: the full fit straight from the guess, and staged fits (scale first, then
    // the SQUID with the calibration held, then all) from several asymmetry starts, since
    // the half-flux depth depends on alpha strongly; the lowest cost wins
    const SCALE: [bool; 6] = [true, false, false, false, false, false];
    const SQUID: [bool; 6] = [true, true, true, true, false, false];
    const ALL: [bool; 6] = [true; 6];
    // residual level that only the right basin reaches (in FIT_SCALE_HZ units)
    let (fmin, fmax) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d.1), b.max(d.1)));
    let good_rms = 5e-3 * (fmax - fmin) / FIT_SCALE_HZ;
    let as6 = |v: &[f64]| -> [f64; 6] { std::array::from_fn(|k| v[k]) };
    let mut best: Option<lsq::LmResult> = None;
    let mut last_err = None;
    for start in [None, Some(None), Some(Some(0.1)), Some(Some(0.5))] {
        let run = || -> Result<lsq::LmResult> {
            let Some(alpha_start) = start else { return partial(&x0, &ALL) };
            let mut x = x0;
            if let Some(a) = alpha_start {
                x[1] = lsq::logit(a);
            }
            let r1 = partial(&x, &SCALE)?;
            let r2 = partial(&as6(&r1.x), &SQUID)?;
            partial(&as6(&r2.x), &ALL)
        };
        match run() {
            Ok(r) if best.as_ref().is_none_or(|b| r.cost < b.cost) => best = Some(r),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
        if best.as_ref().is_some_and(|b| (2.0 * b.cost / data.len() as f64).sqrt() < good_rms) {
            break;
        }
    }
    let res = match (best, last_err) {
        (Some(r), _) => r,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start runs"),
    };
    let (a, alpha, i0, lg, i_off, i_phi0) = decode(&res.x);
    let mut at_bound = Vec::new();
    if alpha < 1e-4 {
        at_bound.push("alpha".to_string());
    }
    if alpha > 1.0 - 1e-4 {
        at_bound.push("alpha".to_string());
    }
    if lg < 1e-15 {
        at_bound.push("Lg".to_string());
    }
    let residuals_hz: Vec<f64> = res.residuals.iter().map(|r| r * FIT_SCALE_HZ).collect();
    let rms_hz = (residuals_hz.iter().map(|r| r * r).sum::<f64>() / residuals_hz.len() as f64).sqrt();
    Ok(TuningFit {
        scaling_a: a,
        alpha,
        i0,
        lg,
        i_off,
        i_phi0,
        beta_l: 2.0 * lg * i0 / FLUX_QUANTUM,
        rms_hz,
        iterations: res.iterations,
        at_bound,
        residuals_hz,
    })
}
