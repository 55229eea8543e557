//! Complex transmission analysis for notch-type resonators: background removal,
//! algebraic circle fit, linear notch model, Duffing response, Kerr and TLS fits,
//! and flux-period extraction from tuning maps.
//!
//! Sign convention throughout: the linear notch response is
//! `1 - (Q_L/Q_c) e^{-i phi} / (1 + 2i Q_L (f/f_r - 1))`, and the nonlinear
//! response uses the same sign of the imaginary unit so that `n = 0` reduces to it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::magnetics::FluxCalibration;

pub const MIN_FIT_POINTS: usize = 16;
/// Fraction of points on each edge treated as off-resonant.
pub const EDGE_FRACTION: f64 = 0.1;
/// Relative tolerance on the matched-radius identity.
pub const RADIUS_TOL: f64 = 0.01;
/// Upper bound on edge-refit passes in background correction.
const BACKGROUND_PASSES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub bias_current_a: Option<f64>,
    pub attenuation_db: Option<f64>,
    pub power_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexTrace {
    pub freqs: Vec<f64>,
    pub s21: Vec<Complex64>,
    /// Power at the device input (W).
    pub power_at_device: Option<f64>,
    pub meta: TraceMeta,
}

impl ComplexTrace {
    pub fn new(freqs: Vec<f64>, s21: Vec<Complex64>) -> Result<Self> {
        let t = ComplexTrace { freqs, s21, power_at_device: None, meta: TraceMeta::default() };
        t.validate()?;
        Ok(t)
    }

    pub fn with_power(mut self, p: f64) -> Self {
        self.power_at_device = Some(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.s21.len() {
            return Err(Error::Precondition(format!(
                "{} frequencies but {} samples",
                self.freqs.len(),
                self.s21.len()
            )));
        }
        if self.freqs.iter().any(|f| !f.is_finite()) || self.s21.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::domain("trace contains non-finite values"));
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("frequencies must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    fn require_fit_size(&self) -> Result<()> {
        self.validate()?;
        if self.len() < MIN_FIT_POINTS {
            return Err(Error::Precondition(format!("need at least {MIN_FIT_POINTS} points, got {}", self.len())));
        }
        Ok(())
    }

    fn edge_count(&self) -> usize {
        ((self.len() as f64 * EDGE_FRACTION).round() as usize).max(2)
    }

    /// Indices of the outer samples on both edges.
    pub fn edge_indices(&self) -> Vec<usize> {
        let k = self.edge_count();
        let n = self.len();
        (0..k).chain(n - k..n).collect()
    }
}

/// Smooth complex baseline `(a0 + a1 (f - f0)) exp(i (phi0 - 2 pi tau (f - f0)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub a0: f64,
    pub a1: f64,
    pub phi0: f64,
    pub tau: f64,
    pub f0: f64,
}

impl BackgroundModel {
    pub fn identity() -> Self {
        BackgroundModel { a0: 1.0, a1: 0.0, phi0: 0.0, tau: 0.0, f0: 0.0 }
    }

    pub fn baseline(&self, f: f64) -> Complex64 {
        let df = f - self.f0;
        Complex64::from_polar(self.a0 + self.a1 * df, self.phi0 - 2.0 * PI * self.tau * df)
    }

    pub fn remove(&self, trace: &ComplexTrace) -> ComplexTrace {
        let mut out = trace.clone();
        for (z, &f) in out.s21.iter_mut().zip(&trace.freqs) {
            *z /= self.baseline(f);
        }
        out
    }

    pub fn apply(&self, trace: &ComplexTrace) -> ComplexTrace {
        let mut out = trace.clone();
        for (z, &f) in out.s21.iter_mut().zip(&trace.freqs) {
            *z *= self.baseline(f);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundCorrection {
    pub trace: ComplexTrace,
    pub model: BackgroundModel,
    /// The dip occupies more than 80% of the window; the edge estimate is suspect.
    pub narrow_span: bool,
}

pub(crate) fn unwrap_phase(z: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut offset = 0.0;
    let mut prev = f64::NAN;
    for v in z {
        let a = v.arg();
        if prev.is_finite() {
            let d = a - prev;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        prev = a;
        out.push(a + offset);
    }
    out
}

/// Weighted straight-line fit: returns (intercept, slope, slope standard error).
pub(crate) fn line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    if x.len() < 2 || !(sw > 0.0) {
        return Err(Error::Precondition("line fit needs two weighted points".into()));
    }
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Precondition("line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let icpt = ym - slope * xm;
    let se = if x.len() > 2 {
        let ss: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - icpt - slope * a).powi(2)).sum();
        (ss / (x.len() - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok((icpt, slope, se))
}

fn edge_background(trace: &ComplexTrace, divide_by: Option<&NotchParams>) -> Result<BackgroundModel> {
    let idx = trace.edge_indices();
    let f0 = 0.5 * (trace.freqs[0] + trace.freqs[trace.len() - 1]);
    let z: Vec<Complex64> = match divide_by {
        Some(p) => trace.s21.iter().zip(&trace.freqs).map(|(z, &f)| z / p.s21(f)).collect(),
        None => trace.s21.clone(),
    };
    let phase = unwrap_phase(&z);
    let x: Vec<f64> = idx.iter().map(|&k| trace.freqs[k] - f0).collect();
    let w = vec![1.0; x.len()];
    let ph: Vec<f64> = idx.iter().map(|&k| phase[k]).collect();
    let amp: Vec<f64> = idx.iter().map(|&k| z[k].norm()).collect();
    let (phi0, ph_slope, _) = line_fit(&x, &ph, &w)?;
    let (a0, a1, _) = line_fit(&x, &amp, &w)?;
    if !(a0 > 0.0) {
        return Err(Error::domain("off-resonant amplitude is not positive"));
    }
    Ok(BackgroundModel { a0, a1, phi0, tau: -ph_slope / (2.0 * PI), f0 })
}

/// Window width in linewidths, read from the arc swept around the fitted circle.
fn span_in_linewidths(trace: &ComplexTrace) -> Option<f64> {
    let c = fit_circle_algebraic(&trace.s21).ok()?;
    let rel: Vec<Complex64> = trace.s21.iter().map(|z| z - c.center).collect();
    let th = unwrap_phase(&rel);
    let swept = (th[th.len() - 1] - th[0]).abs();
    if swept >= 2.0 * PI {
        return Some(f64::INFINITY);
    }
    Some((swept / 4.0).tan())
}

/// Divide out a linear phase ramp and amplitude tilt estimated on the outer samples.
///
/// The edge estimate is repeated with the fitted resonance divided out until it settles,
/// which removes the bias the resonance tail puts on the delay and amplitude.
pub fn correct_background(trace: &ComplexTrace) -> Result<BackgroundCorrection> {
    trace.require_fit_size()?;
    let mut model = edge_background(trace, None)?;
    let mut corrected = model.remove(trace);
    for _ in 0..BACKGROUND_PASSES {
        let Ok(fit) = fit_linear_resonance(&corrected) else { break };
        let Ok(m) = edge_background(trace, Some(&fit.notch())) else { break };
        let moved = (m.tau - model.tau).abs() * (trace.freqs[trace.len() - 1] - trace.freqs[0])
            + (m.a0 / model.a0 - 1.0).abs()
            + (m.phi0 - model.phi0).abs();
        model = m;
        corrected = model.remove(trace);
        if moved < 1e-12 {
            break;
        }
    }
    let depth = corrected.s21.iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
    // flag windows narrower than 5 linewidths: the +-2 linewidth core then fills > 80%
    let narrow_span = depth > 1e-6 && span_in_linewidths(&corrected).is_some_and(|s| s < 5.0);
    Ok(BackgroundCorrection { trace: corrected, model, narrow_span })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Complex64,
    pub radius: f64,
}

/// Taubin algebraic circle fit (Newton on the characteristic polynomial).
pub fn fit_circle_algebraic(points: &[Complex64]) -> Result<Circle> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Geometry(format!("circle fit needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let mean = points.iter().sum::<Complex64>() / nf;
    let scale = (points.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / nf).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Geometry("circle fit on coincident points".into()));
    }
    let (mut mxx, mut myy, mut mxy, mut mxz, mut myz, mut mzz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for z in points {
        let u = (z - mean) / scale;
        let zi = u.norm_sqr();
        mxx += u.re * u.re;
        myy += u.im * u.im;
        mxy += u.re * u.im;
        mxz += u.re * zi;
        myz += u.im * zi;
        mzz += zi * zi;
    }
    mxx /= nf;
    myy /= nf;
    mxy /= nf;
    mxz /= nf;
    myz /= nf;
    mzz /= nf;
    // scatter matrix of the normalised points; one tiny eigenvalue means a line
    let tr = mxx + myy;
    let det2 = mxx * myy - mxy * mxy;
    if det2 <= 1e-24 * tr * tr {
        return Err(Error::Geometry("collinear points have no finite circle".into()));
    }
    let mz = mxx + myy;
    let cov_xy = mxx * myy - mxy * mxy;
    let var_z = mzz - mz * mz;
    let a3 = 4.0 * mz;
    let a2 = -3.0 * mz * mz - mzz;
    let a1 = var_z * mz + 4.0 * cov_xy * mz - mxz * mxz - myz * myz;
    let a0 = mxz * (mxz * myy - myz * mxy) + myz * (myz * mxx - mxz * mxy) - var_z * cov_xy;
    let (mut x, mut y) = (0.0f64, a0);
    for _ in 0..100 {
        let dy = a1 + x * (2.0 * a2 + 3.0 * a3 * x);
        let xn = x - y / dy;
        if xn == x || !xn.is_finite() {
            break;
        }
        let yn = a0 + xn * (a1 + xn * (a2 + xn * a3));
        if yn.abs() >= y.abs() {
            break;
        }
        x = xn;
        y = yn;
    }
    let det = x * x - x * mz + cov_xy;
    let xc = (mxz * (myy - x) - myz * mxy) / det / 2.0;
    let yc = (myz * (mxx - x) - mxz * mxy) / det / 2.0;
    let radius = (xc * xc + yc * yc + mz).sqrt() * scale;
    let center = mean + Complex64::new(xc, yc) * scale;
    if !radius.is_finite() || !center.re.is_finite() || !center.im.is_finite() {
        return Err(Error::Geometry("degenerate circle fit".into()));
    }
    Ok(Circle { center, radius })
}

/// Parameters of the linear notch model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchParams {
    pub f_r: f64,
    pub q_l: f64,
    pub q_c_abs: f64,
    /// Impedance-mismatch angle (rad).
    pub phi: f64,
}

impl NotchParams {
    pub fn s21(&self, f: f64) -> Complex64 {
        notch_s21(f, self.f_r, self.q_l, self.q_c_abs, self.phi)
    }

    pub fn q_c_eff(&self) -> f64 {
        self.q_c_abs / self.phi.cos()
    }

    /// Build from internal and effective coupling quality factors.
    pub fn from_qi_qc(f_r: f64, q_i: f64, q_c_eff: f64, phi: f64) -> Self {
        let q_l = 1.0 / (1.0 / q_i + 1.0 / q_c_eff);
        NotchParams { f_r, q_l, q_c_abs: q_c_eff * phi.cos(), phi }
    }
}

fn notch_s21(f: f64, f_r: f64, q_l: f64, q_c_abs: f64, phi: f64) -> Complex64 {
    let num = Complex64::from_polar(q_l / q_c_abs, -phi);
    Complex64::new(1.0, 0.0) - num / Complex64::new(1.0, 2.0 * q_l * (f / f_r - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorFit {
    pub f_r: f64,
    pub q_l: f64,
    pub q_c_abs: f64,
    pub phi: f64,
    pub q_c_eff: f64,
    pub q_i: f64,
    /// Circle center after normalising the off-resonant point to 1.
    pub center: Complex64,
    /// Matched-circle radius `r * cos(phi)`.
    pub r0: f64,
    /// RMS complex residual of the final fit.
    pub rms_residual: f64,
    /// `(Q_L / (2 Q_c_eff)) / r0 - 1` at the solution.
    pub radius_mismatch: f64,
    /// Complex factor applied to the data to put the off-resonant point at 1.
    pub normalization: Complex64,
    pub overcoupled: bool,
    pub iterations: usize,
}

impl ResonatorFit {
    pub fn notch(&self) -> NotchParams {
        NotchParams { f_r: self.f_r, q_l: self.q_l, q_c_abs: self.q_c_abs, phi: self.phi }
    }

    /// Total linewidth (rad/s).
    pub fn kappa(&self) -> f64 {
        2.0 * PI * self.f_r / self.q_l
    }

    pub fn kappa_c(&self) -> f64 {
        2.0 * PI * self.f_r / self.q_c_eff
    }

    pub fn kappa_i(&self) -> f64 {
        2.0 * PI * self.f_r / self.q_i
    }
}

/// `1/Q_i = 1/Q_L - cos(phi)/|Q_c|`.
pub fn qi_from(q_l: f64, q_c_abs: f64, phi: f64) -> Result<f64> {
    if !(q_l > 0.0) || !(q_c_abs > 0.0) {
        return Err(Error::domain("quality factors must be positive"));
    }
    let inv = 1.0 / q_l - phi.cos() / q_c_abs;
    if inv <= 1e-12 / q_l {
        return Err(Error::Overcoupled(format!(
            "Q_L = {q_l} is not below Q_c_eff = {}; internal losses unresolved",
            q_c_abs / phi.cos()
        )));
    }
    Ok(1.0 / inv)
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

fn edge_noise(trace: &ComplexTrace) -> f64 {
    let k = trace.edge_count();
    let n = trace.len();
    let mut acc = 0.0;
    let mut cnt = 0usize;
    for range in [0..k, n - k..n] {
        let idx: Vec<usize> = range.collect();
        for w in idx.windows(2) {
            acc += (trace.s21[w[1]] - trace.s21[w[0]]).norm_sqr();
            cnt += 1;
        }
    }
    // difference of two samples carries twice the complex variance
    (acc / cnt.max(1) as f64 / 2.0).sqrt()
}

fn half_width_guess(freqs: &[f64], dev: &[f64], k_res: usize) -> Option<f64> {
    let level = dev[k_res] / 2f64.sqrt();
    let cross = |a: usize, b: usize| {
        let t = (dev[a] - level) / (dev[a] - dev[b]);
        freqs[a] + t * (freqs[b] - freqs[a])
    };
    let mut hi = None;
    for k in k_res..dev.len() - 1 {
        if dev[k + 1] < level {
            hi = Some(cross(k, k + 1));
            break;
        }
    }
    let mut lo = None;
    for k in (1..=k_res).rev() {
        if dev[k - 1] < level {
            lo = Some(cross(k, k - 1));
            break;
        }
    }
    match (lo, hi) {
        (Some(l), Some(h)) => Some(0.5 * (h - l)),
        (Some(l), None) => Some(freqs[k_res] - l),
        (None, Some(h)) => Some(h - freqs[k_res]),
        _ => None,
    }
}

/// Fit a background-corrected trace with the linear notch model.
pub fn fit_linear_resonance(trace: &ComplexTrace) -> Result<ResonatorFit> {
    trace.require_fit_size()?;
    let one = Complex64::new(1.0, 0.0);
    let idx = trace.edge_indices();
    let off = idx.iter().map(|&k| trace.s21[k]).sum::<Complex64>() / idx.len() as f64;
    let floor = edge_noise(trace);
    let depth = trace.s21.iter().map(|z| (off - z).norm()).fold(0.0, f64::max);
    if !(depth > 5.0 * floor) || depth < 1e-9 * off.norm() {
        return Err(Error::NoResonance(format!("dip depth {depth:.3e} vs noise floor {floor:.3e}")));
    }

    let circle = fit_circle_algebraic(&trace.s21)?;
    let dir = off - circle.center;
    if dir.norm() == 0.0 {
        return Err(Error::NoResonance("off-resonant reference sits on the circle center".into()));
    }
    let p_off = circle.center + dir * (circle.radius / dir.norm());
    let norm = one / p_off;
    let s: Vec<Complex64> = trace.s21.iter().map(|z| z * norm).collect();
    let zc = circle.center * norm;
    let r = circle.radius * norm.norm();
    let phi_init = -(one - zc).arg();

    // phase around the center
    let dev: Vec<f64> = s.iter().map(|z| (one - z).norm()).collect();
    let k_res = (0..dev.len()).max_by(|&a, &b| dev[a].total_cmp(&dev[b])).unwrap_or(0);
    let fr0 = trace.freqs[k_res];
    let span = trace.freqs[trace.len() - 1] - trace.freqs[0];
    let hw = half_width_guess(&trace.freqs, &dev, k_res).filter(|v| *v > 0.0).unwrap_or(span / 20.0);
    let ql0 = fr0 / (2.0 * hw);
    let theta: Vec<f64> = s.iter().map(|z| (z - zc).arg()).collect();
    let fscale = fr0 / ql0;
    let freqs = &trace.freqs;
    let phase_model = |x: &[f64]| -> Result<Vec<f64>> {
        let fr = fr0 + x[2] * fscale;
        let ql = x[1].exp();
        Ok(freqs
            .iter()
            .zip(&theta)
            .map(|(&f, &t)| wrap(x[0] + 2.0 * (2.0 * ql * (1.0 - f / fr)).atan() - t))
            .collect())
    };
    let pres = levenberg_marquardt(phase_model, &[theta[k_res], ql0.ln(), 0.0], &LmOptions::default())?;
    let f_r1 = fr0 + pres.x[2] * fscale;
    let q_l1 = pres.x[1].exp();
    let q_c1 = q_l1 / (2.0 * r);

    // complex refinement: x = [df/fscale, ln QL, ln Qc, phi, ln|b|, arg b]
    let fscale = f_r1 / q_l1;
    let npts = s.len() as f64;
    let refine = |x0: &[f64], lambda: f64| {
        let model = |x: &[f64]| -> Result<Vec<f64>> {
            let fr = f_r1 + x[0] * fscale;
            let (ql, qc, phi) = (x[1].exp(), x[2].exp(), x[3]);
            let b = Complex64::from_polar(x[4].exp(), x[5]);
            let mut out = Vec::with_capacity(2 * s.len() + 1);
            for (&f, z) in freqs.iter().zip(&s) {
                let d = b * notch_s21(f, fr, ql, qc, phi) - z;
                out.push(d.re);
                out.push(d.im);
            }
            if lambda > 0.0 {
                out.push(lambda.sqrt() * (b.norm() * ql / (2.0 * qc * r) - 1.0));
            }
            Ok(out)
        };
        levenberg_marquardt(model, x0, &LmOptions::default())
    };
    let data_msr = |res: &[f64], lambda: f64| {
        let nd = if lambda > 0.0 { res.len() - 1 } else { res.len() };
        res[..nd].iter().map(|v| v * v).sum::<f64>() / npts
    };
    let x0 = [0.0, q_l1.ln(), q_c1.ln(), phi_init, 0.0, 0.0];
    let mut fit = refine(&x0, 0.0)?;
    let mut iterations = pres.iterations + fit.iterations;
    let mut lambda = 0.0;
    for _ in 0..2 {
        let msr = data_msr(&fit.residuals, lambda);
        lambda = npts * msr.max(1e-30) / (RADIUS_TOL * RADIUS_TOL);
        fit = refine(&fit.x, lambda)?;
        iterations += fit.iterations;
    }
    let x = &fit.x;
    let f_r = f_r1 + x[0] * fscale;
    let (q_l, q_c_abs, phi) = (x[1].exp(), x[2].exp(), x[3]);
    let b = Complex64::from_polar(x[4].exp(), x[5]);
    if !(phi.cos() > 0.0) {
        return Err(Error::Fit { msg: format!("mismatch angle {phi} leaves no positive coupling"), trace: fit.trace });
    }
    let q_c_eff = q_c_abs / phi.cos();
    let r0 = r * phi.cos();
    let radius_mismatch = (q_l / (2.0 * q_c_eff)) * b.norm() / r0 - 1.0;
    if radius_mismatch.abs() > RADIUS_TOL {
        return Err(Error::Fit {
            msg: format!("radius identity violated by {:.2}%", 100.0 * radius_mismatch),
            trace: fit.trace,
        });
    }
    let q_i = qi_from(q_l, q_c_abs, phi)?;
    Ok(ResonatorFit {
        f_r,
        q_l,
        q_c_abs,
        phi,
        q_c_eff,
        q_i,
        center: zc,
        r0,
        rms_residual: data_msr(&fit.residuals, lambda).sqrt(),
        radius_mismatch,
        normalization: norm / b,
        overcoupled: q_c_eff < q_i,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    pub f_r0: f64,
    /// Total linewidth (rad/s).
    pub kappa: f64,
    /// Coupling rate per feedline port (rad/s): the dip depth is `2 kappa_c / kappa`,
    /// so `Q_c = omega_r / (2 kappa_c)`.
    pub kappa_c: f64,
    /// Kerr coefficient (rad/s per photon); the resonance moves to `f_r0 - K n / 2 pi`.
    pub k: f64,
}

impl DuffingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_r0 > 0.0) || !(self.kappa_c > 0.0) || !(self.kappa >= self.kappa_c) || !self.k.is_finite() {
            return Err(Error::domain(format!(
                "need f_r0 > 0 and kappa >= kappa_c > 0, got f_r0 {} kappa {} kappa_c {}",
                self.f_r0, self.kappa, self.kappa_c
            )));
        }
        Ok(())
    }

    pub fn from_notch(p: &NotchParams, k: f64) -> Self {
        DuffingParams { f_r0: p.f_r, kappa: 2.0 * PI * p.f_r / p.q_l, kappa_c: PI * p.f_r / p.q_c_eff(), k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingRoot {
    pub n: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PhotonBranch {
    /// Low-amplitude branch, reached on an upward frequency sweep.
    #[default]
    Low,
    High,
}

fn check_drive(kappa: f64, s_in_sq: f64) -> Result<()> {
    if !(kappa > 0.0) || !(s_in_sq >= 0.0) || !s_in_sq.is_finite() {
        return Err(Error::domain(format!("need kappa > 0 and drive >= 0, got {kappa}, {s_in_sq}")));
    }
    Ok(())
}

/// Scaled cubic `x^3 - 2 d x^2 + (d^2 + 1) x - c` with `x = K n/(kappa/2)`, `d = Delta/(kappa/2)`.
fn scaled_cubic(delta: f64, kappa: f64, kappa_c: f64, k: f64, s_in_sq: f64) -> (f64, f64, f64) {
    let g = 0.5 * kappa;
    (delta / g, k * kappa_c * s_in_sq / (g * g * g), g)
}

/// Discriminant of the photon-number cubic in scaled units; positive means three real roots.
pub fn cubic_discriminant(delta: f64, kappa: f64, kappa_c: f64, k: f64, s_in_sq: f64) -> f64 {
    let (d, c, _) = scaled_cubic(delta, kappa, kappa_c, k, s_in_sq);
    let (b, c1, c0) = (-2.0 * d, d * d + 1.0, -c);
    18.0 * b * c1 * c0 - 4.0 * b.powi(3) * c0 + b * b * c1 * c1 - 4.0 * c1.powi(3) - 27.0 * c0 * c0
}

/// Relative residual of `K^2 n^3 - 2 Delta K n^2 + (Delta^2 + kappa^2/4) n - kappa_c |s_in|^2`.
pub fn duffing_residual(n: f64, delta: f64, kappa: f64, kappa_c: f64, k: f64, s_in_sq: f64) -> f64 {
    let lhs = n * ((k * n - delta).powi(2) + 0.25 * kappa * kappa);
    let rhs = kappa_c * s_in_sq;
    if rhs == 0.0 {
        lhs.abs()
    } else {
        (lhs - rhs).abs() / rhs
    }
}

fn real_cubic_roots(b: f64, c1: f64, c0: f64) -> Vec<f64> {
    let p = c1 - b * b / 3.0;
    let q = 2.0 * b.powi(3) / 27.0 - b * c1 / 3.0 + c0;
    let disc = 18.0 * b * c1 * c0 - 4.0 * b.powi(3) * c0 + b * b * c1 * c1 - 4.0 * c1.powi(3) - 27.0 * c0 * c0;
    let shift = -b / 3.0;
    let mut roots: Vec<f64> = if disc > 0.0 && p < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let th = arg.acos() / 3.0;
        (0..3).map(|k| m * (th - 2.0 * PI * k as f64 / 3.0).cos() + shift).collect()
    } else {
        let h = (0.25 * q * q + p.powi(3) / 27.0).max(0.0).sqrt();
        let a = -q.signum() * (0.5 * q.abs() + h).cbrt();
        let bb = if a != 0.0 { -p / (3.0 * a) } else { 0.0 };
        vec![a + bb + shift]
    };
    let poly = |x: f64| ((x + b) * x + c1) * x + c0;
    let dpoly = |x: f64| (3.0 * x + 2.0 * b) * x + c1;
    for x in roots.iter_mut() {
        for _ in 0..8 {
            let (fx, dx) = (poly(*x), dpoly(*x));
            if dx == 0.0 {
                break;
            }
            let xn = *x - fx / dx;
            if !(poly(xn).abs() < fx.abs()) {
                break;
            }
            *x = xn;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Real nonnegative roots of the steady-state photon-number cubic, sorted by `n`.
pub fn duffing_roots(delta: f64, kappa: f64, kappa_c: f64, k: f64, s_in_sq: f64) -> Result<Vec<DuffingRoot>> {
    check_drive(kappa, s_in_sq)?;
    if s_in_sq == 0.0 {
        return Ok(vec![DuffingRoot { n: 0.0, stable: true }]);
    }
    let lin = kappa_c * s_in_sq / (delta * delta + 0.25 * kappa * kappa);
    let (d, c, g) = scaled_cubic(delta, kappa, kappa_c, k, s_in_sq);
    if k == 0.0 || c.abs() < 1e-300 {
        return Ok(vec![DuffingRoot { n: lin, stable: true }]);
    }
    let xs = real_cubic_roots(-2.0 * d, d * d + 1.0, -c);
    let mut ns: Vec<f64> = xs.iter().map(|x| x * g / k).filter(|n| *n >= 0.0).collect();
    ns.sort_by(f64::total_cmp);
    let roots = match ns.len() {
        3 => vec![
            DuffingRoot { n: ns[0], stable: true },
            DuffingRoot { n: ns[1], stable: false },
            DuffingRoot { n: ns[2], stable: true },
        ],
        1 => vec![DuffingRoot { n: ns[0], stable: true }],
        _ => return Err(Error::Solver(format!("photon-number cubic gave {} admissible roots", ns.len()))),
    };
    for r in &roots {
        let res = duffing_residual(r.n, delta, kappa, kappa_c, k, s_in_sq);
        if !(res < 1e-9) {
            return Err(Error::Solver(format!("cubic root n = {} has relative residual {res:e}", r.n)));
        }
    }
    Ok(roots)
}

/// Intracavity photon number at probe frequency `f` for power `p_g` at the device.
pub fn photon_number(p_g: f64, f: f64, params: &DuffingParams, branch: PhotonBranch) -> Result<f64> {
    params.validate()?;
    if !(p_g >= 0.0) || !(f > 0.0) {
        return Err(Error::domain(format!("need power >= 0 and f > 0, got {p_g}, {f}")));
    }
    let s_in_sq = p_g / (HBAR * 2.0 * PI * f);
    let delta = 2.0 * PI * (f - params.f_r0);
    // the cubic is written for a resonance at omega_r + K n; ours moves down
    let roots = duffing_roots(delta, params.kappa, params.kappa_c, -params.k, s_in_sq)?;
    let pick = match branch {
        PhotonBranch::Low => roots.iter().find(|r| r.stable),
        PhotonBranch::High => roots.iter().rev().find(|r| r.stable),
    };
    pick.map(|r| r.n).ok_or_else(|| Error::Solver("no stable photon-number root".into()))
}

/// True if the drive at `f` sits inside the bistable wedge.
pub fn is_bistable(p_g: f64, f: f64, params: &DuffingParams) -> Result<bool> {
    params.validate()?;
    let s_in_sq = p_g / (HBAR * 2.0 * PI * f);
    let delta = 2.0 * PI * (f - params.f_r0);
    Ok(duffing_roots(delta, params.kappa, params.kappa_c, -params.k, s_in_sq)?.len() == 3)
}

pub fn s21_nonlinear(f: f64, params: &DuffingParams, n: f64) -> Complex64 {
    s21_nonlinear_phi(f, params, n, 0.0)
}

/// Nonlinear response with an impedance-mismatch rotation; `kappa_c` is the effective coupling.
pub fn s21_nonlinear_phi(f: f64, params: &DuffingParams, n: f64, phi: f64) -> Complex64 {
    let shifted = params.f_r0 - params.k * n / (2.0 * PI);
    let de = 2.0 * PI * (f - shifted);
    let num = Complex64::from_polar(params.kappa_c / phi.cos(), -phi);
    Complex64::new(1.0, 0.0) - num / Complex64::new(0.5 * params.kappa, de)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPointFit {
    pub power_w: f64,
    /// Photon number at the fitted resonance.
    pub n: f64,
    pub fit: Option<ResonatorFit>,
    pub bistable: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KerrSweepFit {
    /// Kerr coefficient (rad/s per photon).
    pub k: f64,
    /// `K / 2 pi` (Hz per photon).
    pub k_hz: f64,
    pub f_r0: f64,
    pub kappa: f64,
    pub kappa_c: f64,
    pub phi: f64,
    /// Slope of f_r against n from the weighted line fit (Hz per photon) and its standard error.
    pub slope_hz: f64,
    pub slope_sigma: f64,
    pub intercept_hz: f64,
    /// Whether the joint nonlinear refinement converged; otherwise k comes from the line fit.
    pub refined: bool,
    pub rms_residual: f64,
    pub points: Vec<PowerPointFit>,
}

fn regress_kerr(points: &[PowerPointFit]) -> Result<(f64, f64, f64)> {
    let used: Vec<&PowerPointFit> = points.iter().filter(|p| !p.excluded).collect();
    let n: Vec<f64> = used.iter().map(|p| p.n).collect();
    let fr: Vec<f64> = used.iter().filter_map(|p| p.fit.map(|f| f.f_r)).collect();
    let w: Vec<f64> = used.iter().filter_map(|p| p.fit.map(|f| (f.q_l / f.f_r).powi(2))).collect();
    line_fit(&n, &fr, &w)
}

/// Kerr coefficient from a power sweep of background-corrected traces.
pub fn fit_kerr_power_sweep(traces: &[ComplexTrace], branch: PhotonBranch) -> Result<KerrSweepFit> {
    let mut order: Vec<usize> = (0..traces.len()).collect();
    for t in traces {
        if !t.power_at_device.is_some_and(|p| p >= 0.0) {
            return Err(Error::Precondition("every sweep trace needs a power at the device".into()));
        }
    }
    order.sort_by(|&a, &b| traces[a].power_at_device.unwrap().total_cmp(&traces[b].power_at_device.unwrap()));
    let traces: Vec<&ComplexTrace> = order.iter().map(|&k| &traces[k]).collect();
    if traces.len() < 4 {
        return Err(Error::Precondition(format!("need at least 4 powers, got {}", traces.len())));
    }

    let mut points: Vec<PowerPointFit> = traces
        .iter()
        .map(|t| {
            let p = t.power_at_device.unwrap();
            match fit_linear_resonance(t) {
                Ok(fit) => {
                    let s = p / (HBAR * 2.0 * PI * fit.f_r);
                    let n = 2.0 * fit.kappa_c() * s / fit.kappa().powi(2);
                    PowerPointFit { power_w: p, n, fit: Some(fit), bistable: false, excluded: false }
                }
                Err(_) => PowerPointFit { power_w: p, n: f64::NAN, fit: None, bistable: false, excluded: true },
            }
        })
        .collect();
    let used = || points.iter().filter(|p| !p.excluded);
    if used().count() < 4 {
        return Err(Error::Fit { msg: "fewer than 4 traces could be fitted".into(), trace: vec![] });
    }
    let (nmin, nmax) = used().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.n), b.max(p.n)));
    if !(nmax >= 10.0 * nmin) {
        return Err(Error::Precondition(format!("photon numbers span {nmin:.3e}..{nmax:.3e}, need 10x")));
    }

    let (mut icpt, mut slope, mut sigma) = regress_kerr(&points)?;
    let mean_of = |pts: &[PowerPointFit], g: &dyn Fn(&ResonatorFit) -> f64| {
        let v: Vec<f64> = pts.iter().filter(|p| !p.excluded).filter_map(|p| p.fit.as_ref().map(g)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    // self-consistent photon numbers and fold screening
    for _ in 0..3 {
        let k = -2.0 * PI * slope;
        for (p, t) in points.iter_mut().zip(&traces) {
            let Some(fit) = p.fit else { continue };
            let dp = DuffingParams { f_r0: icpt, kappa: fit.kappa(), kappa_c: (0.5 * fit.kappa_c()).min(fit.kappa()), k };
            if dp.validate().is_err() {
                continue;
            }
            if let Ok(n) = photon_number(p.power_w, fit.f_r, &dp, branch) {
                p.n = n;
            }
            let mut bist = false;
            for &f in &t.freqs {
                if is_bistable(p.power_w, f, &dp).unwrap_or(false) {
                    bist = true;
                    break;
                }
            }
            p.bistable = bist;
            p.excluded = bist;
        }
        if points.iter().filter(|p| !p.excluded).count() < 3 {
            return Err(Error::Fit { msg: "too few traces left after excluding bistable ones".into(), trace: vec![] });
        }
        (icpt, slope, sigma) = regress_kerr(&points)?;
    }

    let kappa0 = mean_of(&points, &|f| f.kappa());
    let kappa_c0 = mean_of(&points, &|f| 0.5 * f.kappa_c()).min(kappa0);
    let phi0 = mean_of(&points, &|f| f.phi);
    let k0 = -2.0 * PI * slope;
    let kscale = k0.abs().max(1e-3 * kappa0);
    let fscale = kappa0 / (2.0 * PI);
    let used_traces: Vec<(&ComplexTrace, f64)> =
        points.iter().zip(&traces).filter(|(p, _)| !p.excluded).map(|(p, t)| (*t, p.power_w)).collect();
    let npts: usize = used_traces.iter().map(|(t, _)| t.len()).sum();
    let unpack = |x: &[f64]| DuffingParams {
        f_r0: icpt + x[0] * fscale,
        kappa: x[1].exp(),
        kappa_c: x[2].exp(),
        k: x[3] * kscale,
    };
    let model = |x: &[f64]| -> Result<Vec<f64>> {
        let dp = unpack(x);
        dp.validate()?;
        let mut out = Vec::with_capacity(2 * npts);
        for (t, p) in &used_traces {
            for (&f, z) in t.freqs.iter().zip(&t.s21) {
                let n = photon_number(*p, f, &dp, branch)?;
                let d = s21_nonlinear_phi(f, &dp, n, x[4]) - z;
                out.push(d.re);
                out.push(d.im);
            }
        }
        Ok(out)
    };
    let x0 = [0.0, kappa0.ln(), kappa_c0.ln(), k0 / kscale, phi0];
    let (dp, phi, refined, rms) = match levenberg_marquardt(model, &x0, &LmOptions::default()) {
        Ok(r) => {
            let rms = (2.0 * r.cost / npts as f64).sqrt();
            (unpack(&r.x), r.x[4], true, rms)
        }
        Err(_) => (
            DuffingParams { f_r0: icpt, kappa: kappa0, kappa_c: kappa_c0, k: k0 },
            phi0,
            false,
            f64::NAN,
        ),
    };
    Ok(KerrSweepFit {
        k: dp.k,
        k_hz: dp.k / (2.0 * PI),
        f_r0: dp.f_r0,
        kappa: dp.kappa,
        kappa_c: dp.kappa_c,
        phi,
        slope_hz: slope,
        slope_sigma: sigma,
        intercept_hz: icpt,
        refined,
        rms_residual: rms,
        points,
    })
}

/// Two-level-system loss: `1/Q_i(n) = delta0 + delta_tls / (1 + (n/n_star)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsModel {
    pub delta0: f64,
    pub delta_tls: f64,
    pub beta: f64,
    pub n_star: f64,
}

impl TlsModel {
    pub fn validate(&self) -> Result<()> {
        let v = [self.delta0, self.delta_tls, self.beta, self.n_star];
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || self.n_star == 0.0 && self.beta > 0.0 {
            return Err(Error::domain(format!("TLS parameters must be finite and >= 0, got {v:?}")));
        }
        Ok(())
    }

    pub fn loss(&self, n: f64) -> f64 {
        self.delta0 + self.delta_tls / (1.0 + (n / self.n_star).powf(self.beta))
    }

    pub fn qi(&self, n: f64) -> f64 {
        1.0 / self.loss(n)
    }

    /// Low-power limit `1/(delta0 + delta_tls)`.
    pub fn qi0(&self) -> f64 {
        1.0 / (self.delta0 + self.delta_tls)
    }

    /// High-power limit `1/delta0`.
    pub fn qi_inf(&self) -> f64 {
        1.0 / self.delta0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsFit {
    pub model: TlsModel,
    pub qi0: f64,
    pub qi_inf: f64,
    /// RMS relative residual in 1/Q_i.
    pub rms_rel: f64,
    pub iterations: usize,
}

pub fn fit_tls(points: &[(f64, f64)]) -> Result<TlsFit> {
    if points.len() < 6 {
        return Err(Error::Precondition(format!("TLS fit needs 6 points, got {}", points.len())));
    }
    if points.iter().any(|(n, q)| !(*n > 0.0) || !(*q > 0.0) || !n.is_finite() || !q.is_finite()) {
        return Err(Error::domain("TLS fit needs positive photon numbers and Q_i"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nlo, nhi) = (pts[0].0, pts[pts.len() - 1].0);
    if nhi < 100.0 * nlo {
        return Err(Error::Precondition(format!("photon numbers {nlo:e}..{nhi:e} span under 2 decades")));
    }
    let inv_hi = 1.0 / pts[pts.len() - 1].1;
    let inv_lo = 1.0 / pts[0].1;
    let d0 = 0.9 * inv_hi.min(inv_lo);
    let dt = (inv_lo - d0).max(0.1 * d0);
    let mid = d0 + 0.5 * dt;
    let nmid = pts.iter().find(|(_, q)| 1.0 / q < mid).map_or((nlo * nhi).sqrt(), |p| p.0);

    let model = |x: &[f64]| -> Result<Vec<f64>> {
        let m = TlsModel { delta0: x[0].exp(), delta_tls: x[1].exp(), beta: x[2].exp(), n_star: x[3].exp() };
        Ok(pts.iter().map(|(n, q)| m.loss(*n) * q - 1.0).collect())
    };
    let opts = LmOptions { max_iter: 500, ..LmOptions::default() };
    let mut best: Option<crate::lsq::LmResult> = None;
    let mut last_err = None;
    for beta in [0.2, 0.5, 1.0] {
        for nf in [0.1, 1.0, 10.0] {
            let x0 = [d0.ln(), dt.ln(), f64::ln(beta), (nmid * nf).ln()];
            match levenberg_marquardt(model, &x0, &opts) {
                Ok(r) => {
                    if best.as_ref().is_none_or(|b| r.cost < b.cost) {
                        best = Some(r);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    let r = match best {
        Some(r) => r,
        None => return Err(last_err.unwrap_or_else(|| Error::Fit { msg: "TLS fit failed".into(), trace: vec![] })),
    };
    let m = TlsModel { delta0: r.x[0].exp(), delta_tls: r.x[1].exp(), beta: r.x[2].exp(), n_star: r.x[3].exp() };
    Ok(TlsFit {
        model: m,
        qi0: m.qi0(),
        qi_inf: m.qi_inf(),
        rms_rel: (2.0 * r.cost / pts.len() as f64).sqrt(),
        iterations: r.iterations,
    })
}

fn harmonic_design(x: &[f64], nu: f64, h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), 2 * h + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            let k = j.div_ceil(2) as f64;
            let a = 2.0 * PI * k * nu * x[i];
            if j % 2 == 1 {
                a.cos()
            } else {
                a.sin()
            }
        }
    })
}

fn harmonic_fit(x: &[f64], y: &DVector<f64>, nu: f64, h: usize) -> Option<(DVector<f64>, f64)> {
    let a = harmonic_design(x, nu, h);
    let coef = a.clone().svd(true, true).solve(y, 1e-12).ok()?;
    let res = (a * &coef - y).norm_squared();
    Some((coef, res))
}

fn harmonic_eval(coef: &DVector<f64>, nu: f64, x: f64) -> f64 {
    let mut v = coef[0];
    for j in 1..coef.len() {
        let k = j.div_ceil(2) as f64;
        let a = 2.0 * PI * k * nu * x;
        v += coef[j] * if j % 2 == 1 { a.cos() } else { a.sin() };
    }
    v
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Zero-flux point of a fitted harmonic series: the shift that removes every odd
/// (sine) component, taken at the frequency maximum rather than the half-flux minimum.
/// The tuning curve is flat at zero flux, so locating its maximum directly is noise-prone.
fn symmetry_center(coef: &DVector<f64>, nu: f64) -> Option<f64> {
    let h = (coef.len() - 1) / 2;
    let total: f64 = coef.iter().skip(1).map(|c| c * c).sum();
    let odd = |phi: f64| -> f64 {
        (1..=h)
            .map(|k| {
                let (a, b) = (coef[2 * k - 1], coef[2 * k]);
                let t = k as f64 * phi;
                (b * t.cos() - a * t.sin()).powi(2)
            })
            .sum()
    };
    let m = 4000;
    let step = 2.0 * PI / m as f64;
    let e: Vec<f64> = (0..m).map(|j| odd(-PI + j as f64 * step)).collect();
    let mut best: Option<(f64, f64)> = None;
    for j in 0..m {
        let (prev, next) = (e[(j + m - 1) % m], e[(j + 1) % m]);
        if e[j] > prev || e[j] > next || e[j] > 0.05 * total {
            continue;
        }
        let c = -PI + j as f64 * step;
        let phi = golden_min(odd, c - step, c + step, 60);
        let x = phi / (2.0 * PI * nu);
        let v = harmonic_eval(coef, nu, x);
        if best.is_none_or(|b| v > b.1) {
            best = Some((x, v));
        }
    }
    best.map(|b| b.0)
}

/// Current per flux quantum and zero-flux offset from a map of resonance frequency vs. current.
pub fn extract_period(map: &[(f64, f64)]) -> Result<FluxCalibration> {
    if map.len() < 8 {
        return Err(Error::Calibration(format!("need at least 8 map points, got {}", map.len())));
    }
    let mut pts = map.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ymean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let y: Vec<f64> = pts.iter().map(|p| p.1 - ymean).collect();
    let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let span = x[x.len() - 1] - x[0];
    if !(span > 0.0) || !(var.sqrt() > 1e-12 * ymean.abs().max(1.0)) {
        return Err(Error::Calibration("resonance frequency does not modulate".into()));
    }
    let power = |nu: f64| {
        let z: Complex64 = x.iter().zip(&y).map(|(xi, yi)| Complex64::from_polar(*yi, -2.0 * PI * nu * xi)).sum();
        z.norm_sqr()
    };
    let nyq = 0.5 * (x.len() - 1) as f64 / span;
    let dnu = 1.0 / (8.0 * span);
    let lo = 1.2 / span;
    let grid: Vec<f64> = (0..).map(|k| lo + k as f64 * dnu).take_while(|v| *v <= nyq).collect();
    if grid.len() < 3 {
        return Err(Error::Calibration("map too short or too sparse for a period search".into()));
    }
    let spec: Vec<f64> = grid.iter().map(|&v| power(v)).collect();
    let kmax = (0..spec.len()).max_by(|&a, &b| spec[a].total_cmp(&spec[b])).unwrap();
    let mean_pow = spec.iter().sum::<f64>() / spec.len() as f64;
    if !(spec[kmax] > 5.0 * mean_pow) {
        return Err(Error::Calibration("no dominant periodicity in the map".into()));
    }
    let mut nu_p = grid[kmax];
    // prefer a subharmonic carrying comparable power (sharp dips push power into harmonics)
    for div in [3.0, 2.0] {
        let cand = nu_p / div;
        if cand >= lo {
            let best = (-4..=4).map(|j| cand + j as f64 * dnu / 2.0).map(power).fold(0.0, f64::max);
            if best > 0.25 * spec[kmax] {
                nu_p = cand;
                break;
            }
        }
    }
    let periods = span * nu_p;
    let h = ((x.len() / 3).saturating_sub(1) / 2).clamp(1, 16);
    let yv = DVector::from_vec(y.clone());
    let cost = |nu: f64| harmonic_fit(&x, &yv, nu, h).map_or(f64::INFINITY, |r| r.1);
    // bracket around the periodogram peak, then golden section
    let width = 1.5 * dnu;
    let nu0 = (-30..=30)
        .map(|j| nu_p + j as f64 * width / 30.0)
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .unwrap();
    let nu = golden_min(cost, nu0 - width / 30.0, nu0 + width / 30.0, 80);
    let i_phi0 = 1.0 / nu;
    if span / i_phi0 < 1.5 || !periods.is_finite() {
        return Err(Error::Calibration(format!("map covers {:.2} periods, need 1.5", span / i_phi0)));
    }
    let (coef, _) = harmonic_fit(&x, &yv, nu, h).ok_or_else(|| Error::Calibration("harmonic fit failed".into()))?;
    let i_off = symmetry_center(&coef, nu).ok_or_else(|| Error::Calibration("map has no mirror symmetry".into()))?;
    FluxCalibration::new(i_off, i_phi0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(f_c: f64, span: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| f_c - 0.5 * span + span * k as f64 / (n - 1) as f64).collect()
    }

    fn trace_of(p: &NotchParams, freqs: Vec<f64>) -> ComplexTrace {
        let s = freqs.iter().map(|&f| p.s21(f)).collect();
        ComplexTrace::new(freqs, s).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn add_noise(t: &mut ComplexTrace, sigma: f64, seed: u64) {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut u = || ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        for z in t.s21.iter_mut() {
            let (a, b) = (u(), u());
            let r = (-2.0 * a.ln()).sqrt() * sigma;
            *z += Complex64::new(r * (2.0 * PI * b).cos(), r * (2.0 * PI * b).sin());
        }
    }

    #[test]
    fn circle_exact_points() {
        let c = Complex64::new(0.7, 0.1);
        let pts: Vec<Complex64> = (0..50).map(|k| c + Complex64::from_polar(0.25, 0.3 + 0.1 * k as f64)).collect();
        let fit = fit_circle_algebraic(&pts).unwrap();
        assert!((fit.center - c).norm() < 1e-12 && (fit.radius - 0.25).abs() < 1e-12, "{fit:?}");
    }

    #[test]
    fn circle_through_three_points() {
        let pts = [Complex64::new(0.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(0.0, 2.0)];
        let fit = fit_circle_algebraic(&pts).unwrap();
        assert!((fit.center - Complex64::new(1.0, 1.0)).norm() < 1e-12);
        assert!((fit.radius - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn circle_rejects_collinear() {
        let pts: Vec<Complex64> = (0..10).map(|k| Complex64::new(k as f64, 2.0 * k as f64 + 1.0)).collect();
        assert!(matches!(fit_circle_algebraic(&pts), Err(Error::Geometry(_))));
    }

    #[test]
    fn circle_with_noise_is_within_three_sigma_over_root_n() {
        let c = Complex64::new(0.7, 0.1);
        let n = 400;
        let pts: Vec<Complex64> = (0..n).map(|k| c + Complex64::from_polar(0.25, 2.0 * PI * k as f64 / n as f64)).collect();
        let mut t = ComplexTrace::new((0..n).map(|k| k as f64).collect(), pts).unwrap();
        add_noise(&mut t, 0.005, 3);
        let fit = fit_circle_algebraic(&t.s21).unwrap();
        let bound = 3.0 * 0.005 / (n as f64).sqrt();
        assert!((fit.center - c).norm() < bound * 2f64.sqrt() && (fit.radius - 0.25).abs() < bound, "{fit:?}");
    }

    #[test]
    fn background_round_trip_is_identity() {
        let bg = BackgroundModel { a0: 0.8, a1: 3e-10, phi0: 1.2, tau: 50e-9, f0: 6e9 };
        let t = trace_of(&NotchParams { f_r: 6e9, q_l: 450.0, q_c_abs: 490.0, phi: 0.1 }, grid(6e9, 2e8, 101));
        let back = bg.remove(&bg.apply(&t));
        for (a, b) in back.s21.iter().zip(&t.s21) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_delay_corrects_to_one() {
        let bg = BackgroundModel { a0: 0.5, a1: 0.0, phi0: -0.4, tau: 50e-9, f0: 5e9 };
        let freqs = grid(5e9, 1e8, 401);
        let s = freqs.iter().map(|&f| bg.baseline(f)).collect();
        let t = ComplexTrace::new(freqs, s).unwrap();
        let c = correct_background(&t).unwrap();
        for z in &c.trace.s21 {
            assert!((z - 1.0).norm() < 1e-10);
        }
        assert!(rel(c.model.tau, 50e-9) < 1e-10);
    }

    #[test]
    fn delay_and_tilt_are_recovered() {
        let p = NotchParams { f_r: 6e9, q_l: 5000.0, q_c_abs: 10000.0, phi: 0.05 };
        let bg = BackgroundModel { a0: 0.7, a1: 2e-10, phi0: 0.3, tau: 50e-9, f0: 6e9 };
        let freqs = grid(6e9, 6e8, 2001);
        let clean = trace_of(&p, freqs);
        let c = correct_background(&bg.apply(&clean)).unwrap();
        assert!(rel(c.model.tau, 50e-9) < 0.01, "tau {}", c.model.tau);
        assert!(!c.narrow_span);
        for &k in &clean.edge_indices() {
            assert!((c.trace.s21[k] - clean.s21[k]).norm() < 1e-3);
        }
    }

    #[test]
    fn narrow_window_is_flagged() {
        let p = NotchParams { f_r: 6e9, q_l: 450.0, q_c_abs: 490.0, phi: 0.0 };
        let t = trace_of(&p, grid(6e9, 4e6, 101));
        assert!(correct_background(&t).unwrap().narrow_span);
    }

    #[test]
    fn linear_fit_recovers_parameters() {
        let p = NotchParams { f_r: 6e9, q_l: 450.0, q_c_abs: 490.0, phi: 0.1 };
        let fit = fit_linear_resonance(&trace_of(&p, grid(6e9, 20.0 * 6e9 / 450.0, 401))).unwrap();
        assert!(rel(fit.f_r, p.f_r) < 1e-3 && rel(fit.q_l, p.q_l) < 1e-3 && rel(fit.q_c_abs, p.q_c_abs) < 1e-3);
        assert!(rel(fit.phi, p.phi) < 1e-3);
        let qi = qi_from(p.q_l, p.q_c_abs, p.phi).unwrap();
        assert!(rel(fit.q_i, qi) < 1e-3);
        assert!(fit.radius_mismatch.abs() < RADIUS_TOL);
    }

    #[test]
    fn linear_fit_with_noise_within_two_percent() {
        let p = NotchParams { f_r: 6e9, q_l: 450.0, q_c_abs: 490.0, phi: 0.1 };
        let mut t = trace_of(&p, grid(6e9, 20.0 * 6e9 / 450.0, 401));
        add_noise(&mut t, 0.005, 11);
        let fit = fit_linear_resonance(&t).unwrap();
        assert!(rel(fit.f_r, p.f_r) < 0.02 && rel(fit.q_l, p.q_l) < 0.02 && rel(fit.q_c_abs, p.q_c_abs) < 0.02);
    }

    #[test]
    fn fig4_zero_bias_loaded_q() {
        // Q_c = 490 and Q_i = 3e4 give Q_L = 482
        let p = NotchParams::from_qi_qc(6e9, 3e4, 490.0, 0.0);
        assert!((p.q_l - 482.1).abs() < 0.1, "{}", p.q_l);
        let fit = fit_linear_resonance(&trace_of(&p, grid(6e9, 20.0 * 6e9 / 482.0, 401))).unwrap();
        assert!((fit.q_l - 482.1).abs() < 0.5);
    }

    #[test]
    fn symmetric_notch_has_zero_phi() {
        let p = NotchParams { f_r: 5e9, q_l: 1000.0, q_c_abs: 2000.0, phi: 0.0 };
        let fit = fit_linear_resonance(&trace_of(&p, grid(5e9, 20.0 * 5e6, 301))).unwrap();
        assert!(fit.phi.abs() < 1e-3);
    }

    #[test]
    fn flat_trace_has_no_resonance() {
        let freqs = grid(6e9, 1e8, 101);
        let t = ComplexTrace::new(freqs, vec![Complex64::new(1.0, 0.0); 101]).unwrap();
        assert!(matches!(fit_linear_resonance(&t), Err(Error::NoResonance(_))));
    }

    #[test]
    fn short_trace_is_rejected() {
        let t = ComplexTrace::new(grid(6e9, 1e8, 10), vec![Complex64::new(1.0, 0.0); 10]).unwrap();
        assert!(matches!(fit_linear_resonance(&t), Err(Error::Precondition(_))));
    }

    #[test]
    fn qi_examples() {
        assert!((qi_from(482.0, 490.0, 0.0).unwrap() - 29522.5).abs() < 1.0);
        assert!((qi_from(482.0, f64::INFINITY, 0.3).unwrap() - 482.0).abs() < 1e-9);
        assert!(matches!(qi_from(490.0, 490.0, 0.0), Err(Error::Overcoupled(_))));
        assert!(matches!(qi_from(500.0, 490.0, 0.0), Err(Error::Overcoupled(_))));
    }

    #[test]
    fn duffing_linear_limits() {
        let (kappa, kc) = (2.0 * PI * 12e6, 2.0 * PI * 11e6);
        let r = duffing_roots(3e7, kappa, kc, 0.0, 1e9).unwrap();
        assert_eq!(r.len(), 1);
        assert!(rel(r[0].n, kc * 1e9 / (9e14 + kappa * kappa / 4.0)) < 1e-12);
        let r = duffing_roots(0.0, kappa, kc, 0.0, 1e9).unwrap();
        assert!(rel(r[0].n, 4.0 * kc * 1e9 / (kappa * kappa)) < 1e-12);
    }

    #[test]
    fn duffing_bistable_wedge_has_three_roots() {
        let (kappa, kc, k) = (2.0 * PI * 12e6, 2.0 * PI * 11e6, 2.0 * PI * 216e3);
        // Delta = 3 kappa/2 above the cubic's resonance, drive chosen mid-wedge
        // scaled detuning d = 3 has three roots for scaled drive c in (2.911, 5.089)
        let delta = 1.5 * kappa;
        let g = 0.5 * kappa;
        let s = 4.0 * g * g * g / (k * kc);
        let disc = cubic_discriminant(delta, kappa, kc, k, s);
        let r = duffing_roots(delta, kappa, kc, k, s).unwrap();
        assert_eq!(r.len() == 3, disc > 0.0);
        assert_eq!(r.len(), 3, "disc {disc}");
        assert!(r[0].stable && !r[1].stable && r[2].stable);
    }

    #[test]
    fn photon_number_linear_regime() {
        let d = DuffingParams { f_r0: 6e9, kappa: 2.0 * PI * 12e6, kappa_c: 2.0 * PI * 11e6, k: 0.0 };
        assert_eq!(photon_number(0.0, 6e9, &d, PhotonBranch::Low).unwrap(), 0.0);
        let n1 = photon_number(1e-17, 6e9, &d, PhotonBranch::Low).unwrap();
        let n2 = photon_number(2e-17, 6e9, &d, PhotonBranch::Low).unwrap();
        assert!(rel(n2, 2.0 * n1) < 1e-9);
        let s = 1e-17 / (HBAR * 2.0 * PI * 6e9);
        assert!(rel(n1, 4.0 * d.kappa_c * s / d.kappa.powi(2)) < 1e-12);
    }

    #[test]
    fn nonlinear_s21_limits() {
        let d = DuffingParams { f_r0: 6e9, kappa: 2.0 * PI * 12e6, kappa_c: 2.0 * PI * 11e6, k: 2.0 * PI * 216e3 };
        let n = 10.0;
        let fmin = 6e9 - 216e3 * n;
        let z = s21_nonlinear(fmin, &d, n);
        assert!((z.re - (1.0 - 2.0 * d.kappa_c / d.kappa)).abs() < 1e-12 && z.im.abs() < 1e-12);
        assert!((fmin - 6e9 + 2.16e6).abs() < 1e-3);
        // the per-port coupling maps to Q_c = omega_r / (2 kappa_c)
        let notch = NotchParams { f_r: 6e9, q_l: 6e9 / 12e6, q_c_abs: 6e9 / 22e6, phi: 0.0 };
        for f in [5.98e9, 5.999e9, 6e9, 6.003e9] {
            assert!((s21_nonlinear(f, &d, 0.0) - notch.s21(f)).norm() < 1e-12);
        }
    }

    #[test]
    fn nonlinear_zero_photons_fit_consistency() {
        let d = DuffingParams { f_r0: 6e9, kappa: 2.0 * PI * 12e6, kappa_c: 2.0 * PI * 5.5e6, k: 2.0 * PI * 216e3 };
        let freqs = grid(6e9, 2.4e8, 401);
        let s = freqs.iter().map(|&f| s21_nonlinear(f, &d, 0.0)).collect();
        let fit = fit_linear_resonance(&ComplexTrace::new(freqs, s).unwrap()).unwrap();
        assert!(rel(fit.f_r, 6e9) < 1e-3 && rel(fit.kappa(), d.kappa) < 1e-3 && rel(0.5 * fit.kappa_c(), d.kappa_c) < 1e-3);
    }

    #[test]
    fn tls_paper_values() {
        let m = TlsModel { delta0: 3.4e-7, delta_tls: 2.6e-6, beta: 0.295, n_star: 3.30 };
        assert!(rel(m.qi_inf(), 2.9e6) < 0.02);
        assert!(rel(m.qi0(), 3.5e5) < 0.05);
        assert!(rel(m.qi(3.30), 1.0 / (3.4e-7 + 1.3e-6)) < 1e-12);
        assert!(rel(m.qi(3.30), 6.1e5) < 0.01);
    }

    #[test]
    fn tls_noiseless_round_trip() {
        let m = TlsModel { delta0: 3.4e-7, delta_tls: 2.6e-6, beta: 0.295, n_star: 3.30 };
        let pts: Vec<(f64, f64)> = (0..40).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).map(|n| (n, m.qi(n))).collect();
        let f = fit_tls(&pts).unwrap();
        for (a, b) in [
            (f.model.delta0, m.delta0),
            (f.model.delta_tls, m.delta_tls),
            (f.model.beta, m.beta),
            (f.model.n_star, m.n_star),
        ] {
            assert!(rel(a, b) < 1e-4, "{:?}", f.model);
        }
    }

    #[test]
    fn tls_needs_two_decades() {
        let pts: Vec<(f64, f64)> = (0..8).map(|k| (1.0 + k as f64, 1e5)).collect();
        assert!(matches!(fit_tls(&pts), Err(Error::Precondition(_))));
    }

    #[test]
    fn period_of_cosine_map() {
        let (i_phi0, i_off) = (17.8e-6, 2.3e-6);
        let map: Vec<(f64, f64)> = (0..300)
            .map(|k| -30e-6 + 60e-6 * k as f64 / 299.0)
            .map(|i| (i, 6e9 + 3e8 * (2.0 * PI * (i - i_off) / i_phi0).cos()))
            .collect();
        let cal = extract_period(&map).unwrap();
        assert!(rel(cal.i_phi0, i_phi0) < 1e-6 && (cal.i_off - i_off).abs() < 1e-10, "{cal:?}");
    }

    #[test]
    fn constant_map_is_rejected() {
        let map: Vec<(f64, f64)> = (0..50).map(|k| (k as f64 * 1e-6, 6e9)).collect();
        assert!(matches!(extract_period(&map), Err(Error::Calibration(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn background_remove_apply_identity(a0 in 0.1f64..2.0, a1 in -1e-10f64..1e-10, phi0 in -3.0f64..3.0, tau in 0.0f64..1e-7) {
            let bg = BackgroundModel { a0, a1, phi0, tau, f0: 6e9 };
            let t = trace_of(&NotchParams { f_r: 6e9, q_l: 800.0, q_c_abs: 1000.0, phi: 0.2 }, grid(6e9, 1e8, 64));
            let back = bg.apply(&bg.remove(&t));
            for (a, b) in back.s21.iter().zip(&t.s21) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn off_resonance_approaches_one(ql in 100.0f64..1e4, ratio in 1.05f64..20.0, off in 20.0f64..1e3) {
            let p = NotchParams { f_r: 6e9, q_l: ql, q_c_abs: ql * ratio, phi: 0.0 };
            let lw = 6e9 / ql;
            let z = p.s21(6e9 + off * lw);
            prop_assert!((z - 1.0).norm() < ql / (p.q_c_abs * 2.0 * off));
        }

        #[test]
        fn cubic_roots_back_substitute(d in -10.0f64..10.0, drive in 0.01f64..100.0, kf in 0.001f64..0.1) {
            let kappa = 2.0 * PI * 12e6;
            let kc = 0.9 * kappa;
            let k = kf * kappa;
            let s = drive * kappa / kc * kappa / kf;
            let roots = duffing_roots(d * kappa, kappa, kc, k, s).unwrap();
            prop_assert!(roots.len() == 1 || roots.len() == 3);
            for r in &roots {
                prop_assert!(duffing_residual(r.n, d * kappa, kappa, kc, k, s) < 1e-9);
            }
            // same roots when every rate is expressed in cycles per second
            let tw = 2.0 * PI;
            let hz = duffing_roots(d * kappa / tw, kappa / tw, kc / tw, k / tw, s / tw).unwrap();
            prop_assert_eq!(hz.len(), roots.len());
            for (a, b) in hz.iter().zip(&roots) {
                prop_assert!((a.n - b.n).abs() <= 1e-9 * b.n.max(1e-300));
            }
        }

        #[test]
        fn tls_qi_nondecreasing(d0 in 1e-8f64..1e-5, dt in 0.0f64..1e-4, beta in 0.05f64..2.0, ns in 0.01f64..100.0) {
            let m = TlsModel { delta0: d0, delta_tls: dt, beta, n_star: ns };
            let mut prev = 0.0;
            for k in 0..60 {
                let q = m.qi(10f64.powf(-4.0 + 0.2 * k as f64));
                prop_assert!(q >= prev * (1.0 - 1e-12));
                prev = q;
            }
        }
    }
}
