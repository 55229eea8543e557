//! Static model of an asymmetric dc SQUID with finite loop inductance.
//!
//! Phases follow the usual convention: `delta1 = phi_l + varphi`,
//! `delta2 = phi_l - varphi`, with `varphi = pi * Phi_s / Phi0` up to the winding `m`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::constants::FLUX_QUANTUM;
use crate::error::{Error, Result};
use crate::roots;

/// Below this |cos(delta)| the junction inductance is treated as divergent.
pub const COS_DELTA_MIN: f64 = 1e-9;
/// Fluxoid residual accepted by the screening solver (rad).
pub const SCREENING_TOL: f64 = 1e-12;
/// Gradient norm (units of E0) below which a point counts as stationary.
pub const STATIONARY_TOL: f64 = 1e-10;

const CELL_SCAN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquidParams {
    /// Mean critical current (A).
    pub i0: f64,
    pub alpha: f64,
    /// Geometric loop inductance (H).
    pub lg: f64,
    pub cj1: f64,
    pub cj2: f64,
}

impl SquidParams {
    pub fn new(i0: f64, alpha: f64, lg: f64, cj1: f64, cj2: f64) -> Result<Self> {
        let p = SquidParams { i0, alpha, lg, cj1, cj2 };
        p.validate()?;
        Ok(p)
    }

    /// Parameters without junction capacitance.
    pub fn inductive(i0: f64, alpha: f64, lg: f64) -> Result<Self> {
        Self::new(i0, alpha, lg, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::domain(format!("I0 must be positive, got {}", self.i0)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.lg >= 0.0 && self.lg.is_finite()) {
            return Err(Error::domain(format!("Lg must be >= 0, got {}", self.lg)));
        }
        if !(self.cj1 >= 0.0 && self.cj2 >= 0.0) {
            return Err(Error::domain("junction capacitances must be >= 0"));
        }
        Ok(())
    }

    pub fn ic1(&self) -> f64 {
        self.i0 * (1.0 + self.alpha)
    }

    pub fn ic2(&self) -> f64 {
        self.i0 * (1.0 - self.alpha)
    }

    pub fn beta_l(&self) -> f64 {
        2.0 * self.lg * self.i0 / FLUX_QUANTUM
    }

    pub fn cs(&self) -> f64 {
        self.cj1 + self.cj2
    }

    /// Energy scale Phi0 I0 / 2pi (J).
    pub fn e0(&self) -> f64 {
        FLUX_QUANTUM * self.i0 / (2.0 * PI)
    }

    /// Same SQUID with a loop inductance chosen to give `beta`.
    pub fn with_beta(&self, beta: f64) -> Self {
        SquidParams { lg: beta * FLUX_QUANTUM / (2.0 * self.i0), ..*self }
    }
}

/// Transport branch of the terminal phase. `Zero` carries screening sign +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Zero,
    One,
}

impl Branch {
    pub fn n(self) -> u8 {
        match self {
            Branch::Zero => 0,
            Branch::One => 1,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Branch::Zero => 1.0,
            Branch::One => -1.0,
        }
    }

    pub fn from_sign(sign: f64) -> Self {
        if sign >= 0.0 {
            Branch::Zero
        } else {
            Branch::One
        }
    }
}

pub fn junction_currents(p: &SquidParams) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&p.alpha) {
        return Err(Error::domain(format!("alpha must lie in [0, 1), got {}", p.alpha)));
    }
    Ok((p.ic1(), p.ic2()))
}

/// Small-signal Josephson inductance Phi0 / (2 pi Ic cos delta).
pub fn josephson_inductance(ic: f64, delta: f64) -> Result<f64> {
    if !(ic > 0.0) {
        return Err(Error::domain(format!("critical current must be positive, got {ic}")));
    }
    let c = delta.cos();
    if c.abs() < COS_DELTA_MIN {
        return Err(Error::Divergence(format!("cos(delta) = {c:e} at delta = {delta}")));
    }
    Ok(FLUX_QUANTUM / (2.0 * PI * ic * c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveJunction {
    pub r: f64,
    pub psi0: f64,
    pub d: f64,
}

/// Rewrites the two junction currents as a single effective junction R sin(phi_l + psi0).
pub fn transport_decomposition(varphi: f64, p: &SquidParams) -> EffectiveJunction {
    let (s, c) = varphi.sin_cos();
    let d = (c * c + p.alpha * p.alpha * s * s).sqrt();
    EffectiveJunction { r: 2.0 * p.i0 * d, psi0: (p.alpha * s).atan2(c), d }
}

pub fn terminal_phase(i: f64, varphi: f64, branch: Branch, p: &SquidParams) -> Result<f64> {
    let ej = transport_decomposition(varphi, p);
    let x = if i == 0.0 { 0.0 } else { i / ej.r };
    if !(x.abs() <= 1.0) {
        return Err(Error::NoSolution(format!(
            "transport current {i:e} A exceeds effective critical current {:e} A",
            ej.r
        )));
    }
    let n = branch.n() as f64;
    Ok(-ej.psi0 + branch.sign() * x.asin() + n * PI)
}

/// Circulating current for the given transport current and branch.
pub fn circulating_current(varphi: f64, i: f64, branch: Branch, p: &SquidParams) -> Result<f64> {
    let phi_l = terminal_phase(i, varphi, branch, p)?;
    Ok(circulating_from_phases(phi_l, varphi, p))
}

fn circulating_from_phases(phi_l: f64, varphi: f64, p: &SquidParams) -> f64 {
    let (sl, cl) = phi_l.sin_cos();
    let (s, c) = varphi.sin_cos();
    p.i0 * (p.alpha * sl * c + cl * s)
}

/// Zero-transport circulating current in the reduced fixed-sign form used by the flux map.
pub fn circulating_current_reduced(varphi: f64, sign: f64, p: &SquidParams) -> f64 {
    sign * p.i0 * (1.0 - p.alpha * p.alpha) * reduced_shape(varphi, p.alpha)
}

/// sin(x) / sqrt(1 + a^2 tan^2 x), continued through cos x = 0.
fn reduced_shape(x: f64, a: f64) -> f64 {
    let (s, c) = x.sin_cos();
    let d = (c * c + a * a * s * s).sqrt();
    if d == 0.0 {
        s
    } else {
        s * c.abs() / d
    }
}

/// Derivative of `reduced_shape` where cos x != 0.
fn reduced_shape_deriv(x: f64, a: f64) -> f64 {
    let (s, c) = x.sin_cos();
    let k = 1.0 - a * a;
    let d = (c * c + a * a * s * s).sqrt();
    if d == 0.0 {
        return c;
    }
    let g = s * c;
    let v = (2.0 * x).cos() / d + k * g * g / (d * d * d);
    if c >= 0.0 {
        v
    } else {
        -v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningPoint {
    pub phi_l: f64,
    pub varphi: f64,
    pub m: i64,
    pub branch_n: u8,
    pub screening_sign: i8,
    /// Transport current (A).
    pub i: f64,
    pub i_circ: f64,
    pub phi_e: f64,
    pub phi_s: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Another fluxoid state exists at the same applied flux.
    pub multivalued: bool,
}

impl ScreeningPoint {
    /// Builds the stationary point whose loop phase is `varphi`; the applied flux follows
    /// from the fluxoid constraint.
    pub fn from_loop_phase(varphi: f64, branch: Branch, m: i64, i: f64, p: &SquidParams) -> Result<Self> {
        let phi_l = terminal_phase(i, varphi, branch, p)?;
        let i_circ = circulating_from_phases(phi_l, varphi, p);
        let phi_s = FLUX_QUANTUM * (varphi / PI - m as f64);
        Ok(ScreeningPoint {
            phi_l,
            varphi,
            m,
            branch_n: branch.n(),
            screening_sign: branch.sign() as i8,
            i,
            i_circ,
            phi_e: phi_s + p.lg * i_circ,
            phi_s,
            delta1: phi_l + varphi,
            delta2: phi_l - varphi,
            multivalued: false,
        })
    }

    pub fn branch(&self) -> Branch {
        if self.branch_n == 0 {
            Branch::Zero
        } else {
            Branch::One
        }
    }

    /// |2 varphi + pi beta I_circ/I0 - 2 pi (phi_e + m)| in radians.
    pub fn fluxoid_residual(&self, p: &SquidParams) -> f64 {
        let phi_e = self.phi_e / FLUX_QUANTUM;
        (2.0 * self.varphi + PI * p.beta_l() * self.i_circ / p.i0 - 2.0 * PI * (phi_e + self.m as f64)).abs()
    }
}

/// Winding number placing `phi_e / Phi0 + m` in the principal cell [-1/2, 1/2).
pub fn principal_winding(phi_e: f64) -> i64 {
    -(phi_e / FLUX_QUANTUM + 0.5).floor() as i64
}

/// Dimensionless fluxoid residual at zero transport current.
fn cell_residual(varphi: f64, target: f64, branch: Branch, p: &SquidParams, beta: f64) -> f64 {
    let c = circulating_current(varphi, 0.0, branch, p).unwrap_or(f64::NAN) / p.i0;
    2.0 * varphi + PI * beta * c - 2.0 * PI * target
}

/// Applied flux (units of Phi0, offset by m) that holds loop phase `varphi` in equilibrium.
fn cell_image(varphi: f64, branch: Branch, p: &SquidParams, beta: f64) -> f64 {
    let c = circulating_current(varphi, 0.0, branch, p).unwrap_or(f64::NAN) / p.i0;
    varphi / PI + 0.5 * beta * c
}

/// Solves the fluxoid constraint at zero transport current with the loop phase
/// restricted to the cell |varphi| <= pi/2. The root nearest the unscreened phase is returned.
pub fn solve_screening(phi_e: f64, p: &SquidParams, branch: Branch, m: i64) -> Result<ScreeningPoint> {
    let seed = PI * (phi_e / FLUX_QUANTUM + m as f64);
    solve_screening_seeded(phi_e, p, branch, m, seed)
}

/// As [`solve_screening`] but returns the root nearest `seed`.
pub fn solve_screening_seeded(
    phi_e: f64,
    p: &SquidParams,
    branch: Branch,
    m: i64,
    seed: f64,
) -> Result<ScreeningPoint> {
    p.validate()?;
    let target = phi_e / FLUX_QUANTUM + m as f64;
    let beta = p.beta_l();
    if beta == 0.0 || p.alpha == 1.0 {
        let varphi = PI * target;
        let mut pt = ScreeningPoint::from_loop_phase(varphi, branch, m, 0.0, p)?;
        pt.phi_e = phi_e;
        pt.phi_s = phi_e;
        return Ok(pt);
    }
    if target.abs() > 0.5 + 0.5 * beta + 1e-12 {
        return Err(Error::NoSolution(format!(
            "applied flux {target} Phi0 (with m = {m}) lies outside the principal cell image"
        )));
    }
    let f = |x: f64| cell_residual(x, target, branch, p, beta);
    let roots = roots::scan_roots_tol(f, -FRAC_PI_2, FRAC_PI_2, CELL_SCAN, 1e-13)?;
    let varphi = match roots.iter().copied().min_by(|a, b| (a - seed).abs().total_cmp(&(b - seed).abs())) {
        Some(r) => r,
        None => {
            return Err(Error::Solver(format!("no fluxoid root for applied flux {target} Phi0")));
        }
    };
    let mut pt = finish_point(varphi, target, branch, m, p, beta)?;
    pt.phi_e = phi_e;
    pt.multivalued = roots.len() > 1 || neighbour_cells_overlap(target, branch, p, beta);
    Ok(pt)
}

fn finish_point(varphi: f64, target: f64, branch: Branch, m: i64, p: &SquidParams, beta: f64) -> Result<ScreeningPoint> {
    let res = cell_residual(varphi, target, branch, p, beta);
    if !(res.abs() < SCREENING_TOL) {
        return Err(Error::Solver(format!("fluxoid residual {res:e} above tolerance")));
    }
    ScreeningPoint::from_loop_phase(varphi, branch, m, 0.0, p)
}

/// True when the cells m +- 1 also admit a solution at the same applied flux.
fn neighbour_cells_overlap(target: f64, branch: Branch, p: &SquidParams, beta: f64) -> bool {
    let (lo, hi) = cell_image_range(branch, p, beta);
    let inside = |t: f64| t > lo + 1e-12 && t < hi - 1e-12;
    inside(target + 1.0) || inside(target - 1.0)
}

fn cell_image_range(branch: Branch, p: &SquidParams, beta: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..=4 * CELL_SCAN {
        let x = -FRAC_PI_2 + PI * k as f64 / (4 * CELL_SCAN) as f64;
        let v = cell_image(x, branch, p, beta);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Loop phase of the state connected to zero flux in the principal cell (fast path
/// used by the tuning curve; no multivaluedness check).
pub(crate) fn principal_loop_phase(phi_e: f64, p: &SquidParams) -> Result<(f64, i64)> {
    let m = principal_winding(phi_e);
    let target = phi_e / FLUX_QUANTUM + m as f64;
    let beta = p.beta_l();
    if beta == 0.0 || p.alpha == 1.0 {
        return Ok((PI * target, m));
    }
    let f = |x: f64| cell_residual(x, target, Branch::Zero, p, beta);
    let x = roots::nearest_root(f, 0.0, -FRAC_PI_2, FRAC_PI_2, PI / 128.0)?;
    Ok((x, m))
}

/// Screening point on the principal cell, zero-flux branch.
pub fn solve_principal(phi_e: f64, p: &SquidParams) -> Result<ScreeningPoint> {
    let m = principal_winding(phi_e);
    solve_screening_seeded(phi_e, p, Branch::Zero, m, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningCurve {
    pub points: Vec<ScreeningPoint>,
    /// Closed applied-flux intervals (Wb) where more than one fluxoid state exists.
    pub multivalued_intervals: Vec<(f64, f64)>,
}

/// Screening characteristic on a sorted grid, each point seeded by its predecessor.
pub fn screening_curve(grid: &[f64], p: &SquidParams, branch: Branch) -> Result<ScreeningCurve> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("applied-flux grid must be strictly increasing".into()));
    }
    let mut points: Vec<ScreeningPoint> = Vec::with_capacity(grid.len());
    for &phi_e in grid {
        let m = principal_winding(phi_e);
        let pt = match points.last() {
            Some(prev) => {
                let seed = PI * (prev.phi_s / FLUX_QUANTUM + m as f64);
                solve_screening_seeded(phi_e, p, branch, m, seed)?
            }
            None => solve_screening(phi_e, p, branch, m)?,
        };
        points.push(pt);
    }
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    for (k, pt) in points.iter().enumerate() {
        match (pt.multivalued, open) {
            (true, None) => open = Some(pt.phi_e),
            (false, Some(start)) => {
                intervals.push((start, points[k - 1].phi_e));
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(start), Some(last)) = (open, points.last()) {
        intervals.push((start, last.phi_e));
    }
    Ok(ScreeningCurve { points, multivalued_intervals: intervals })
}

/// Applied flux as an explicit function of screened flux, with the screening sign held
/// fixed over the whole period (the closed-form flux map).
pub fn applied_flux_map(phi_s: f64, p: &SquidParams, sign: f64) -> f64 {
    let x = PI * phi_s / FLUX_QUANTUM;
    phi_s + 0.5 * sign * FLUX_QUANTUM * p.beta_l() * (1.0 - p.alpha * p.alpha) * reduced_shape(x, p.alpha)
}

/// Smallest slope dPhi_e/dPhi_s of [`applied_flux_map`] over one period.
pub fn flux_map_min_slope(alpha: f64, beta: f64, sign: f64) -> f64 {
    const N: usize = 20_000;
    let k = 1.0 - alpha * alpha;
    let mut min = f64::INFINITY;
    for j in 0..N {
        let x = 2.0 * PI * j as f64 / N as f64;
        let slope = 1.0 + 0.5 * sign * PI * beta * k * reduced_shape_deriv(x, alpha);
        min = min.min(slope);
        // one-sided slopes at the kink cos x = 0
        if alpha > 0.0 && (x - FRAC_PI_2).abs() < PI / N as f64 {
            for xs in [FRAC_PI_2 - 1e-9, FRAC_PI_2 + 1e-9, 3.0 * FRAC_PI_2 - 1e-9, 3.0 * FRAC_PI_2 + 1e-9] {
                min = min.min(1.0 + 0.5 * sign * PI * beta * k * reduced_shape_deriv(xs, alpha));
            }
        }
    }
    min
}

/// Screening parameter at which the flux map first loses monotonicity, bisected to `tol`.
pub fn multivaluedness_onset(alpha: f64, sign: f64, tol: f64) -> Result<f64> {
    let folds = |b: f64| flux_map_min_slope(alpha, b, sign) < 0.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while !folds(hi) {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NoSolution("flux map stays monotone".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if folds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquidInductances {
    pub lj1: f64,
    pub lj2: f64,
    pub larm1: f64,
    pub larm2: f64,
    pub ls: f64,
}

/// Inductances seen at the CPW node for explicit critical currents and phase drops.
pub fn squid_inductance_from(ic1: f64, ic2: f64, lg: f64, delta1: f64, delta2: f64) -> Result<SquidInductances> {
    let lj1 = josephson_inductance(ic1, delta1)?;
    let lj2 = josephson_inductance(ic2, delta2)?;
    let larm1 = lj1 + 0.5 * lg;
    let larm2 = lj2 + 0.5 * lg;
    let sum = larm1 + larm2;
    if sum.abs() < f64::MIN_POSITIVE || (sum.abs() / larm1.abs().max(larm2.abs())) < 1e-12 {
        return Err(Error::Divergence("parallel arm inductances cancel".into()));
    }
    Ok(SquidInductances { lj1, lj2, larm1, larm2, ls: larm1 * larm2 / sum })
}

pub fn squid_inductance(p: &SquidParams, point: &ScreeningPoint) -> Result<SquidInductances> {
    squid_inductance_from(p.ic1(), p.ic2(), p.lg, point.delta1, point.delta2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSample {
    pub u: f64,
    pub e0: f64,
    pub grad: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    pub det_h: f64,
    pub stable: bool,
    pub i_reduced: f64,
}

/// Dimensionless potential u = U/E0 with analytic gradient and Hessian in (phi_l, varphi).
pub fn potential(phi_l: f64, varphi: f64, phi_e: f64, m: i64, i: f64, p: &SquidParams) -> Result<PotentialSample> {
    let beta = p.beta_l();
    if !(beta > 0.0) {
        return Err(Error::domain("dimensionless potential needs beta_L > 0; use Phi_s = Phi_e"));
    }
    let a1 = 1.0 + p.alpha;
    let a2 = 1.0 - p.alpha;
    let (s1, c1) = (phi_l + varphi).sin_cos();
    let (s2, c2) = (phi_l - varphi).sin_cos();
    let ir = i / p.i0;
    let q = varphi / PI - m as f64 - phi_e / FLUX_QUANTUM;
    let u = -a1 * c1 - a2 * c2 + (2.0 * PI / beta) * q * q - ir * phi_l;
    let grad = [a1 * s1 + a2 * s2 - ir, a1 * s1 - a2 * s2 + (4.0 / beta) * q];
    let a = a1 * c1;
    let b = a2 * c2;
    let hessian = [[a + b, a - b], [a - b, a + b + 4.0 / (PI * beta)]];
    let det_h = hessian[0][0] * hessian[1][1] - hessian[0][1] * hessian[1][0];
    Ok(PotentialSample {
        u,
        e0: p.e0(),
        grad,
        hessian,
        det_h,
        stable: det_h > 0.0 && hessian[0][0] > 0.0 && hessian[1][1] > 0.0,
        i_reduced: ir,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

/// Classifies a stationary point by the Hessian of the potential.
pub fn branch_switching_onset(p: &SquidParams, point: &ScreeningPoint) -> Result<Stability> {
    let s = potential(point.phi_l, point.varphi, point.phi_e, point.m, point.i, p)?;
    let g = s.grad[0].abs().max(s.grad[1].abs());
    if g > 1e3 * STATIONARY_TOL {
        return Err(Error::Precondition(format!("point is not stationary (|grad u| = {g:e})")));
    }
    let h = s.hessian;
    let scale = h[0][0].abs().max(h[1][1].abs()).max(h[0][1].abs());
    if s.det_h.abs() <= 1e-9 * scale * scale {
        return Ok(Stability::Marginal);
    }
    Ok(if s.stable { Stability::Stable } else { Stability::Unstable })
}

/// Zero-transport stationary points of the potential at `phi_e`, located by multi-start
/// Newton iteration over one period in both phases (winding fixed to m = 0).
pub fn stationary_points(phi_e: f64, p: &SquidParams) -> Result<Vec<(ScreeningPoint, Stability)>> {
    const NL: usize = 16;
    const NV: usize = 48;
    let centre = PI * phi_e / FLUX_QUANTUM;
    let mut found: Vec<(f64, f64)> = Vec::new();
    for a in 0..NL {
        for b in 0..NV {
            let mut x = -PI + 2.0 * PI * (a as f64 + 0.5) / NL as f64;
            let mut y = centre - 1.5 * PI + 3.0 * PI * (b as f64 + 0.5) / NV as f64;
            let mut ok = false;
            for _ in 0..60 {
                let s = potential(x, y, phi_e, 0, 0.0, p)?;
                let g = s.grad[0].abs().max(s.grad[1].abs());
                if g < STATIONARY_TOL {
                    ok = true;
                    break;
                }
                let h = s.hessian;
                if s.det_h.abs() < 1e-14 {
                    break;
                }
                let mut dx = (h[1][1] * s.grad[0] - h[0][1] * s.grad[1]) / s.det_h;
                let mut dy = (h[0][0] * s.grad[1] - h[1][0] * s.grad[0]) / s.det_h;
                let n = dx.abs().max(dy.abs());
                if n > 0.5 {
                    dx *= 0.5 / n;
                    dy *= 0.5 / n;
                }
                x -= dx;
                y -= dy;
            }
            if !ok {
                continue;
            }
            let x = (x + PI).rem_euclid(2.0 * PI) - PI;
            if !found.iter().any(|q| ang_dist(q.0, x) + (q.1 - y).abs() < 1e-7) {
                found.push((x, y));
            }
        }
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut out = Vec::with_capacity(found.len());
    for (phi_l, varphi) in found {
        let n0 = terminal_phase(0.0, varphi, Branch::Zero, p)?;
        let branch = if ang_dist(n0, phi_l) < 1e-6 { Branch::Zero } else { Branch::One };
        let i_circ = circulating_from_phases(phi_l, varphi, p);
        let pt = ScreeningPoint {
            phi_l,
            varphi,
            m: 0,
            branch_n: branch.n(),
            screening_sign: branch.sign() as i8,
            i: 0.0,
            i_circ,
            phi_e,
            phi_s: FLUX_QUANTUM * varphi / PI,
            delta1: phi_l + varphi,
            delta2: phi_l - varphi,
            multivalued: false,
        };
        let st = branch_switching_onset(p, &pt)?;
        out.push((pt, st));
    }
    let minima = out.iter().filter(|(_, s)| *s == Stability::Stable).count();
    for (pt, _) in out.iter_mut() {
        pt.multivalued = minima > 1;
    }
    Ok(out)
}

fn ang_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}
