//! Loop inductances and flux-transfer efficiencies.
//!
//! Mutual inductance uses zero-thickness filaments along the wire centerlines;
//! finite wire size enters only the analytic self-inductance formulas.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::constants::{FLUX_QUANTUM, MU0};
use crate::error::{Error, Result};
use crate::quad::AdaptiveGl;

/// Loops closer than this (m) are treated as touching.
pub const MIN_SEPARATION: f64 = 1e-9;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolylineLoop {
    pub vertices: Vec<Point3>,
    #[serde(default = "default_closed")]
    pub closed: bool,
    #[serde(default)]
    pub wire_width: Option<f64>,
    #[serde(default)]
    pub wire_radius: Option<f64>,
}

fn default_closed() -> bool {
    true
}

impl PolylineLoop {
    pub fn new(vertices: Vec<Point3>) -> Result<Self> {
        let l = PolylineLoop { vertices, closed: true, wire_width: None, wire_radius: None };
        l.validate()?;
        Ok(l)
    }

    /// Axis-aligned square of side `side` centred on (cx, cy) at height `z`, counter-clockwise.
    pub fn square(side: f64, cx: f64, cy: f64, z: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::Geometry(format!("square side must be positive, got {side}")));
        }
        let h = 0.5 * side;
        Self::new(vec![[cx - h, cy - h, z], [cx + h, cy - h, z], [cx + h, cy + h, z], [cx - h, cy + h, z]])
    }

    pub fn with_wire_width(mut self, w: f64) -> Self {
        self.wire_width = Some(w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::Geometry(format!("loop needs >= 3 vertices, got {}", self.vertices.len())));
        }
        if !self.closed {
            return Err(Error::Geometry("loop must be closed".into()));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("non-finite vertex coordinate".into()));
        }
        for (a, b) in self.segments() {
            if norm(sub(b, a)) == 0.0 {
                return Err(Error::Geometry("consecutive vertices coincide".into()));
            }
        }
        Ok(())
    }

    /// Closed list of segments (start, end).
    pub fn segments(&self) -> Vec<(Point3, Point3)> {
        let n = self.vertices.len();
        (0..n).map(|k| (self.vertices[k], self.vertices[(k + 1) % n])).collect()
    }

    /// Splits every segment into `k` equal pieces.
    pub fn subdivided(&self, k: usize) -> Self {
        let mut v = Vec::with_capacity(self.vertices.len() * k);
        for (a, b) in self.segments() {
            for j in 0..k {
                let t = j as f64 / k as f64;
                v.push(add(a, scale(sub(b, a), t)));
            }
        }
        PolylineLoop { vertices: v, ..self.clone() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        PolylineLoop { vertices: self.vertices.iter().map(|&p| scale(p, s)).collect(), ..self.clone() }
    }

    pub fn translated(&self, d: Point3) -> Self {
        PolylineLoop { vertices: self.vertices.iter().map(|&p| add(p, d)).collect(), ..self.clone() }
    }

    /// Vector area (m^2); its norm is the enclosed area for planar loops.
    pub fn vector_area(&self) -> Point3 {
        self.segments().iter().fold([0.0; 3], |acc, (a, b)| add(acc, scale(cross(*a, *b), 0.5)))
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

/// Shortest distance between segments [p0, p1] and [q0, q1].
pub fn segment_distance(p0: Point3, p1: Point3, q0: Point3, q1: Point3) -> f64 {
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let c = dot(d1, r);
    let b = dot(d1, d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    norm(sub(add(p0, scale(d1, s)), add(q0, scale(d2, t))))
}

pub fn min_separation(a: &PolylineLoop, b: &PolylineLoop) -> f64 {
    let sb = b.segments();
    a.segments()
        .iter()
        .flat_map(|&(p0, p1)| sb.iter().map(move |&(q0, q1)| segment_distance(p0, p1, q0, q1)))
        .fold(f64::INFINITY, f64::min)
}

/// Neumaier-compensated sum in the given order.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// G(u) with G'' = 1/sqrt(u^2 + d^2); collinear limit when d = 0.
fn g_parallel(u: f64, d: f64) -> f64 {
    if d == 0.0 {
        if u == 0.0 {
            0.0
        } else {
            u * u.abs().ln() - u.abs()
        }
    } else {
        u * (u / d).asinh() - (u * u + d * d).sqrt()
    }
}

/// Line integral of 1/|p - r| for r along the segment from `b0` with unit direction `e`, length `len`.
fn inner_line_integral(p: Point3, b0: Point3, e: Point3, len: f64) -> f64 {
    let w = sub(p, b0);
    let s0 = dot(w, e);
    let rho2 = (dot(w, w) - s0 * s0).max(0.0);
    let rho = rho2.sqrt();
    if rho > 1e-12 * len {
        ((len - s0) / rho).asinh() + (s0 / rho).asinh()
    } else if s0 < 0.0 {
        ((len - s0) / -s0).ln()
    } else {
        (s0 / (s0 - len)).ln()
    }
}

/// Double integral of dl_a . dl_b / |r_a - r_b| for one pair of straight segments.
fn segment_pair(a: (Point3, Point3), b: (Point3, Point3), q: &AdaptiveGl) -> Result<f64> {
    // canonical order makes the pair term symmetric under swapping the loops
    let (a, b) = if key(a) <= key(b) { (a, b) } else { (b, a) };
    let da = sub(a.1, a.0);
    let db = sub(b.1, b.0);
    let la = norm(da);
    let lb = norm(db);
    let ea = scale(da, 1.0 / la);
    let eb = scale(db, 1.0 / lb);
    let cos = dot(ea, eb);
    if cos.abs() < 1e-12 {
        return Ok(0.0);
    }
    if norm(cross(ea, eb)) < 1e-12 {
        // parallel: coordinates along ea, perpendicular offset d
        let w = sub(b.0, a.0);
        let along = dot(w, ea);
        let d = norm(sub(w, scale(ea, along)));
        let d = if d < 1e-12 * la.max(lb) { 0.0 } else { d };
        let (a1, a2) = (0.0, la);
        let (b1, b2) = if cos > 0.0 { (along, along + lb) } else { (along - lb, along) };
        let v = g_parallel(a2 - b1, d) - g_parallel(a1 - b1, d) - g_parallel(a2 - b2, d) + g_parallel(a1 - b2, d);
        return Ok(cos.signum() * v);
    }
    let f = |s: f64| inner_line_integral(add(a.0, scale(ea, s)), b.0, eb, lb);
    Ok(cos * q.integrate(f, 0.0, la)?)
}

fn key(s: (Point3, Point3)) -> [u64; 6] {
    let mut k = [0u64; 6];
    for i in 0..3 {
        k[i] = s.0[i].to_bits();
        k[i + 3] = s.1[i].to_bits();
    }
    k
}

/// Neumann mutual inductance between two closed filament loops (H).
pub fn neumann_mutual(a: &PolylineLoop, b: &PolylineLoop) -> Result<f64> {
    neumann_mutual_tol(a, b, DEFAULT_REL_TOL)
}

pub fn neumann_mutual_tol(a: &PolylineLoop, b: &PolylineLoop, rel_tol: f64) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let sep = min_separation(a, b);
    if sep < MIN_SEPARATION {
        return Err(Error::Geometry(format!("loops touch or intersect (separation {sep:e} m)")));
    }
    // the outer integrand is smooth at the loop separation scale, so aim the per-pair
    // tolerance well below the requested total accuracy
    let q = AdaptiveGl::new(10, rel_tol * 1e-3, 0.0);
    let sa = a.segments();
    let sb = b.segments();
    let mut terms = Vec::with_capacity(sa.len() * sb.len());
    for &x in &sa {
        for &y in &sb {
            terms.push(segment_pair(x, y, &q)?);
        }
    }
    Ok(MU0 / (4.0 * PI) * compensated_sum(terms))
}

/// Square-coil self-inductance for side `l` and wire width `w` (H).
pub fn square_coil_self_inductance(l: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w < l) {
        return Err(Error::domain(format!("need 0 < w < l, got w = {w:e}, l = {l:e}")));
    }
    Ok(2.0 * MU0 * l / PI * (SQRT_2 - 2.0 + (4.0 * l / (w * (1.0 + SQRT_2))).ln()))
}

/// Straight cylindrical wire of length `l` and radius `r` (H).
pub fn wire_self_inductance(l: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && l > r) {
        return Err(Error::domain(format!("need l > r > 0, got l = {l:e}, r = {r:e}")));
    }
    Ok(MU0 * l / (2.0 * PI) * ((2.0 * l / r).ln() - 0.75))
}

/// eta2 = M / L_i.
pub fn transfer_efficiency(m: f64, l_i: f64) -> Result<f64> {
    if !(l_i > 0.0) {
        return Err(Error::domain("input-coil inductance must be positive"));
    }
    Ok(m / l_i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferChain {
    pub m: f64,
    pub l_p: f64,
    pub l_wire: f64,
    pub l_i: f64,
    /// Flux per unit current at the source (Wb/A).
    pub transduction: f64,
}

pub fn chain_efficiency(chain: &TransferChain) -> Result<f64> {
    let den = chain.l_p + chain.l_wire + chain.l_i;
    if !(den > 0.0) {
        return Err(Error::domain("chain inductance must be positive"));
    }
    Ok(chain.m / den)
}

/// Mutual inductance from the current needed for one flux quantum.
pub fn mutual_from_period(i_phi0: f64) -> Result<f64> {
    if !(i_phi0 > 0.0) {
        return Err(Error::domain("current per flux quantum must be positive"));
    }
    Ok(FLUX_QUANTUM / i_phi0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxCalibration {
    pub i_off: f64,
    /// Current per flux quantum (A).
    pub i_phi0: f64,
}

impl FluxCalibration {
    pub fn new(i_off: f64, i_phi0: f64) -> Result<Self> {
        if i_phi0 == 0.0 || !i_phi0.is_finite() {
            return Err(Error::Calibration("current per flux quantum must be nonzero".into()));
        }
        Ok(FluxCalibration { i_off, i_phi0 })
    }

    pub fn current_for(&self, phi_e: f64) -> f64 {
        self.i_off + self.i_phi0 * phi_e / FLUX_QUANTUM
    }
}

pub fn flux_from_current(i_in: f64, cal: &FluxCalibration) -> f64 {
    FLUX_QUANTUM * (i_in - cal.i_off) / cal.i_phi0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTemplate {
    /// SQUID loop side (m), held fixed.
    pub d_s: f64,
    /// Input-coil wire width used for its self-inductance (m).
    pub coil_wire_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub ratio: f64,
    pub h: f64,
    pub m: Option<f64>,
    pub l_i: Option<f64>,
    pub eta2: Option<f64>,
    pub error: Option<String>,
}

/// eta2 = M/L_i over coil/SQUID side ratios and vertical separations, with coaxial
/// square filaments (coil at z = 0, SQUID loop at z = h).
pub fn efficiency_sweep(ratios: &[f64], hs: &[f64], t: &SweepTemplate) -> Result<Vec<EfficiencyPoint>> {
    if ratios.iter().chain(hs.iter()).any(|v| !(*v >= 0.0)) || ratios.iter().any(|r| *r <= 0.0) {
        return Err(Error::domain("ratio grid must be positive and separation grid non-negative"));
    }
    let squid_at = |h: f64| PolylineLoop::square(t.d_s, 0.0, 0.0, h);
    let mut out = Vec::with_capacity(ratios.len() * hs.len());
    for &h in hs {
        let s = squid_at(h)?;
        for &ratio in ratios {
            let d_i = ratio * t.d_s;
            let coil = PolylineLoop::square(d_i, 0.0, 0.0, 0.0)?;
            let l_i = square_coil_self_inductance(d_i, t.coil_wire_width)?;
            let point = match neumann_mutual(&coil, &s) {
                Ok(m) => EfficiencyPoint { ratio, h, m: Some(m), l_i: Some(l_i), eta2: Some(m / l_i), error: None },
                Err(e @ Error::Geometry(_)) => {
                    EfficiencyPoint { ratio, h, m: None, l_i: Some(l_i), eta2: None, error: Some(e.to_string()) }
                }
                Err(e) => return Err(e),
            };
            out.push(point);
        }
    }
    Ok(out)
}

/// Ratio maximising eta2 at separation `h` within a sweep result.
pub fn argmax_ratio(points: &[EfficiencyPoint], h: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.h == h)
        .filter_map(|p| p.eta2.map(|e| (p.ratio, e)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
}
