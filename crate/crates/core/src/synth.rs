//! Synthetic traces, power sweeps and flux maps built from the forward models.
//!
//! Noise comes from the generator named [`RNG_NAME`]: ChaCha8 seeded with the
//! 64-bit seed, one stream per trace index, Box–Muller on 53-bit uniforms.
//! Output is bit-identical for identical seed and inputs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftr::{omega_at, FrequencyMode, FtrParams};
use crate::magnetics::{flux_from_current, FluxCalibration};
use crate::s21::{
    is_bistable, photon_number, s21_nonlinear, BackgroundModel, ComplexTrace, DuffingParams, NotchParams,
    PhotonBranch, TlsModel, TraceMeta,
};
use crate::squid;

pub const RNG_NAME: &str = "chacha8-boxmuller-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation per quadrature (linear S21 units).
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        let n = NoiseSpec { sigma, seed };
        n.validate()?;
        Ok(n)
    }

    pub fn none() -> Self {
        NoiseSpec { sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::domain(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Gaussian samples on stream `stream` of the seeded generator.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianStream { rng }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let (u1, u2) = (self.uniform(), self.uniform());
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * PI * u2;
        (r * a.cos(), r * a.sin())
    }

    pub fn complex(&mut self, sigma: f64) -> Complex64 {
        let (a, b) = self.normal_pair();
        Complex64::new(sigma * a, sigma * b)
    }
}

fn check_grid(freqs: &[f64]) -> Result<()> {
    if freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Precondition("frequency grid must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn add_noise(s: &mut [Complex64], noise: &NoiseSpec, stream: u64) {
    if noise.sigma == 0.0 {
        return;
    }
    let mut g = GaussianStream::new(noise.seed, stream);
    for z in s.iter_mut() {
        *z += g.complex(noise.sigma);
    }
}

/// Uniform grid of `n` points centered on `f_c`.
pub fn linear_grid(f_c: f64, span: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![f_c];
    }
    (0..n).map(|k| f_c - 0.5 * span + span * k as f64 / (n - 1) as f64).collect()
}

/// `S_bg(f) S21(f)` plus complex Gaussian noise.
pub fn gen_linear_trace(
    p: &NotchParams,
    bg: &BackgroundModel,
    freqs: &[f64],
    noise: &NoiseSpec,
    stream: u64,
) -> Result<ComplexTrace> {
    check_grid(freqs)?;
    noise.validate()?;
    let mut s: Vec<Complex64> = freqs.iter().map(|&f| bg.baseline(f) * p.s21(f)).collect();
    add_noise(&mut s, noise, stream);
    ComplexTrace::new(freqs.to_vec(), s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSweep {
    pub traces: Vec<ComplexTrace>,
    /// Some probe frequency of the trace sits inside the bistable wedge.
    pub bistable: Vec<bool>,
    pub branch: PhotonBranch,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// One trace per source power; each frequency point uses the self-consistent photon number.
pub fn gen_power_sweep(
    duffing: &DuffingParams,
    powers_dbm: &[f64],
    attenuation_db: f64,
    freqs: &[f64],
    noise: &NoiseSpec,
    branch: PhotonBranch,
) -> Result<PowerSweep> {
    duffing.validate()?;
    check_grid(freqs)?;
    noise.validate()?;
    if powers_dbm.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Precondition("powers must be sorted ascending".into()));
    }
    let mut traces = Vec::with_capacity(powers_dbm.len());
    let mut bistable = Vec::with_capacity(powers_dbm.len());
    for (k, &dbm) in powers_dbm.iter().enumerate() {
        let p_g = dbm_to_watts(dbm - attenuation_db);
        let mut s = Vec::with_capacity(freqs.len());
        let mut bist = false;
        for &f in freqs {
            let n = photon_number(p_g, f, duffing, branch)?;
            bist |= is_bistable(p_g, f, duffing)?;
            s.push(s21_nonlinear(f, duffing, n));
        }
        add_noise(&mut s, noise, k as u64);
        let mut t = ComplexTrace::new(freqs.to_vec(), s)?.with_power(p_g);
        t.meta = TraceMeta { bias_current_a: None, attenuation_db: Some(attenuation_db), power_dbm: Some(dbm) };
        traces.push(t);
        bistable.push(bist);
    }
    Ok(PowerSweep { traces, bistable, branch })
}

/// Quality factors held fixed across a flux map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub q_i: f64,
    pub q_c_eff: f64,
    pub phi: f64,
}

/// Per-point probe window: `n_points` samples over `span_linewidths` linewidths around f_r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    pub n_points: usize,
    pub span_linewidths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMapPoint {
    pub current: f64,
    /// Applied flux (Wb).
    pub phi_e: f64,
    /// Screened loop flux (Wb).
    pub phi_s: f64,
    pub f_r: f64,
    /// Fluxoid winding of the selected state.
    pub m: i64,
    pub multivalued: bool,
    pub trace: ComplexTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMap {
    pub points: Vec<FluxMapPoint>,
    /// Indices `k` where the loop state jumps between points `k - 1` and `k`: the flux cell
    /// changes while more than one fluxoid state exists there.
    pub branch_switches: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
pub fn gen_flux_map(
    ftr: &FtrParams,
    cal: &FluxCalibration,
    currents: &[f64],
    grid: &TraceGrid,
    q: &QModel,
    noise: &NoiseSpec,
    mode: FrequencyMode,
) -> Result<FluxMap> {
    noise.validate()?;
    FluxCalibration::new(cal.i_off, cal.i_phi0)?;
    if grid.n_points < 2 || !(grid.span_linewidths > 0.0) {
        return Err(Error::Precondition("trace grid needs >= 2 points and a positive span".into()));
    }
    if currents.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("currents must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(currents.len());
    for (k, &i) in currents.iter().enumerate() {
        let phi_e = flux_from_current(i, cal);
        let pt = squid::solve_principal(phi_e, &ftr.squid)?;
        let f_r = omega_at(ftr, phi_e, mode)? / (2.0 * PI);
        let notch = NotchParams::from_qi_qc(f_r, q.q_i, q.q_c_eff, q.phi);
        let freqs = linear_grid(f_r, grid.span_linewidths * f_r / notch.q_l, grid.n_points);
        let mut trace = gen_linear_trace(&notch, &BackgroundModel::identity(), &freqs, noise, k as u64)?;
        trace.meta.bias_current_a = Some(i);
        points.push(FluxMapPoint { current: i, phi_e, phi_s: pt.phi_s, f_r, m: pt.m, multivalued: pt.multivalued, trace });
    }
    let branch_switches = branch_switches(&points);
    Ok(FluxMap { points, branch_switches })
}

fn branch_switches(points: &[FluxMapPoint]) -> Vec<usize> {
    (1..points.len())
        .filter(|&k| {
            let (a, b) = (&points[k - 1], &points[k]);
            a.m != b.m && (a.multivalued || b.multivalued)
        })
        .collect()
}

/// (current, f_r) samples of a tuning curve with Gaussian frequency noise `sigma_hz`.
pub fn gen_tuning_samples(
    ftr: &FtrParams,
    cal: &FluxCalibration,
    currents: &[f64],
    sigma_hz: f64,
    seed: u64,
    mode: FrequencyMode,
) -> Result<Vec<(f64, f64)>> {
    if !(sigma_hz >= 0.0) {
        return Err(Error::domain("frequency noise must be >= 0"));
    }
    let mut g = GaussianStream::new(seed, 0);
    currents
        .iter()
        .map(|&i| {
            let f = omega_at(ftr, flux_from_current(i, cal), mode)? / (2.0 * PI);
            let noise = if sigma_hz > 0.0 { sigma_hz * g.normal_pair().0 } else { 0.0 };
            Ok((i, f + noise))
        })
        .collect()
}

/// `(n, Q_i)` points on a log grid with multiplicative Gaussian noise of relative size `1/snr`.
pub fn gen_tls_points(model: &TlsModel, ns: &[f64], snr: Option<f64>, seed: u64) -> Result<Vec<(f64, f64)>> {
    model.validate()?;
    let mut g = GaussianStream::new(seed, 0);
    Ok(ns
        .iter()
        .map(|&n| {
            let q = model.qi(n);
            match snr {
                Some(s) => (n, q * (1.0 + g.normal_pair().0 / s)),
                None => (n, q),
            }
        })
        .collect())
}
