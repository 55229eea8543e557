//! `ftr` command-line front end. Exit codes: 0 success, 1 usage/config/io error,
//! 2 numerical or solver error. Log verbosity comes from `FTR_LOG` (error..trace).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::constants::FLUX_QUANTUM;
use crate::error::{Error, Result};
use crate::ftr::{fit_tuning_curve, flux_grid, tuning_curve, FrequencyMode, TuningFitGuess};
use crate::io::{self, GeometryFile, Manifest, ManifestEntry, SCHEMA_VERSION};
use crate::magnetics::{mutual_from_period, neumann_mutual_tol, DEFAULT_REL_TOL};
use crate::s21::{
    correct_background, extract_period, fit_kerr_power_sweep, fit_linear_resonance, fit_tls, BackgroundModel,
    ComplexTrace, ResonatorFit,
};
use crate::squid::{screening_curve, Branch};
use crate::synth::{self, NoiseSpec, QModel, TraceGrid};

pub const LOG_ENV: &str = "FTR_LOG";

#[derive(Debug, Parser)]
#[command(name = "ftr", version, about = "Flux-tunable resonator modelling and S21 fitting")]
pub struct Cli {
    /// Run configuration (TOML, unit-suffixed keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use the transcendental frequency equation instead of the closed form.
    #[arg(long, global = true)]
    pub exact: bool,
    /// Noise seed for `synth` (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Format of tabular output.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    Linear,
    Kerr,
    Tls,
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Linear,
    Sweep,
    Fluxmap,
    Tls,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screening characteristic: loop flux and circulating current vs applied flux.
    Screen {
        /// Transport branch n (0 or 1).
        #[arg(long, default_value_t = 0)]
        branch: u8,
    },
    /// Tuning curve: resonance frequency and flux responsivity vs applied flux.
    Tune,
    /// Mutual inductance and transfer efficiency of a coil/loop geometry file.
    Mutual {
        /// Geometry JSON; defaults to the `[geometry]` section of the config.
        geometry: Option<PathBuf>,
        /// Relative quadrature tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Fit a trace (linear), a power sweep manifest (kerr), (n, Q_i) points (tls) or a flux map (flux).
    Fit {
        #[arg(value_enum)]
        mode: FitMode,
        input: PathBuf,
        /// Skip the edge-based cable delay and amplitude correction.
        #[arg(long)]
        no_background: bool,
    },
    /// Generate synthetic data files.
    Synth {
        #[arg(value_enum)]
        scenario: Scenario,
    },
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    format: Format,
    mode: FrequencyMode,
    seed: u64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn report<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        io::write_json(&self.path(name), value)?;
        // a closed stdout (e.g. piped into `head`) is not an error; the file is written
        let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?);
        Ok(())
    }

    /// Writes a table as CSV or as a JSON object of columns, depending on `--format`.
    fn table(&self, stem: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
        match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                io::write_csv(&self.path(&name), header, rows)?;
                Ok(name)
            }
            Format::Json => {
                let name = format!("{stem}_rows.json");
                let cols: serde_json::Map<String, serde_json::Value> = header
                    .iter()
                    .enumerate()
                    .map(|(j, h)| (h.to_string(), json!(rows.iter().map(|r| r[j]).collect::<Vec<_>>())))
                    .collect();
                io::write_json(&self.path(&name), &json!({ "schema_version": SCHEMA_VERSION, "columns": cols }))?;
                Ok(name)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.io.out_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| ".".into());
    std::fs::create_dir_all(&out)?;
    let format = match (cli.format, cfg.io.format.as_deref()) {
        (Some(f), _) => f,
        (None, None | Some("csv")) => Format::Csv,
        (None, Some("json")) => Format::Json,
        (None, Some(other)) => {
            return Err(Error::Config { key: "io.format".into(), msg: format!("expected csv|json, got {other}") })
        }
    };
    let mode = if cli.exact { FrequencyMode::Exact } else { FrequencyMode::Approx };
    let ctx = Ctx { cfg, out, format, mode, seed: cli.seed.unwrap_or(0) };
    match &cli.command {
        Command::Screen { branch } => cmd_screen(&ctx, *branch),
        Command::Tune => cmd_tune(&ctx),
        Command::Mutual { geometry, tol } => cmd_mutual(&ctx, geometry.as_deref(), *tol),
        Command::Fit { mode, input, no_background } => cmd_fit(&ctx, *mode, input, !no_background),
        Command::Synth { scenario } => cmd_synth(&ctx, *scenario),
    }
}

fn phi0_grid(cfg: &RunConfig) -> Vec<f64> {
    let (start, periods, n) = cfg.flux_window();
    flux_grid(start, periods, n)
}

fn cmd_screen(ctx: &Ctx, branch: u8) -> Result<()> {
    let p = ctx.cfg.squid()?;
    let branch = match branch {
        0 => Branch::Zero,
        1 => Branch::One,
        b => return Err(Error::Config { key: "--branch".into(), msg: format!("expected 0 or 1, got {b}") }),
    };
    let curve = screening_curve(&phi0_grid(&ctx.cfg), &p, branch)?;
    let rows: Vec<Vec<f64>> = curve
        .points
        .iter()
        .map(|q| {
            vec![
                q.phi_e / FLUX_QUANTUM,
                q.phi_s / FLUX_QUANTUM,
                q.i_circ * 1e9,
                q.branch_n as f64,
                q.m as f64,
                f64::from(u8::from(q.multivalued)),
            ]
        })
        .collect();
    let file = ctx.table("screen", &["phi_e_Phi0", "phi_s_Phi0", "i_circ_nA", "branch_n", "m", "multivalued"], &rows)?;
    let intervals: Vec<[f64; 2]> =
        curve.multivalued_intervals.iter().map(|(a, b)| [a / FLUX_QUANTUM, b / FLUX_QUANTUM]).collect();
    ctx.report(
        "screen.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "screen",
            "beta_L": p.beta_l(),
            "alpha": p.alpha,
            "branch_n": branch.n(),
            "points": rows.len(),
            "multivalued_intervals_Phi0": intervals,
            "table": file,
        }),
    )
}

fn cmd_tune(ctx: &Ctx) -> Result<()> {
    let ftr = ctx.cfg.ftr()?;
    let cal = ctx.cfg.calibration().ok();
    let curve = tuning_curve(&ftr, &phi0_grid(&ctx.cfg), ctx.mode)?;
    let per_phi0 = FLUX_QUANTUM / (2.0 * std::f64::consts::PI);
    let mut header = vec!["phi_e_Phi0"];
    if cal.is_some() {
        header.push("current_uA");
    }
    header.extend(["f_r_hz", "responsivity_hz_per_Phi0", "ls_pH", "gamma", "divergent"]);
    let rows: Vec<Vec<f64>> = curve
        .points
        .iter()
        .map(|q| {
            let mut r = vec![q.phi_e / FLUX_QUANTUM];
            if let Some(c) = &cal {
                r.push(c.current_for(q.phi_e) * 1e6);
            }
            r.extend([
                q.omega_r / (2.0 * std::f64::consts::PI),
                q.responsivity * per_phi0,
                q.ls * 1e12,
                q.gamma,
                f64::from(u8::from(q.divergent)),
            ]);
            r
        })
        .collect();
    let divergent = curve.points.iter().filter(|q| q.divergent).count();
    if divergent > 0 {
        warn!("{divergent} grid points sit on a divergent SQUID inductance");
    }
    let finite = curve.points.iter().filter(|q| !q.divergent).map(|q| q.omega_r / (2.0 * std::f64::consts::PI));
    let (f_min, f_max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| (a.min(f), b.max(f)));
    let file = ctx.table("tune", &header, &rows)?;
    ctx.report(
        "tune.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "tune",
            "mode": if ctx.mode == FrequencyMode::Exact { "exact" } else { "approx" },
            "f0_hz": ftr.cpw.omega0() / (2.0 * std::f64::consts::PI),
            "beta_L": ftr.squid.beta_l(),
            "f_max_hz": f_max,
            "f_min_hz": f_min,
            "max_responsivity_hz_per_Phi0": curve.max_responsivity() * per_phi0,
            "divergent_points": divergent,
            "table": file,
        }),
    )
}

fn cmd_mutual(ctx: &Ctx, geometry: Option<&Path>, tol: Option<f64>) -> Result<()> {
    let g: GeometryFile = match geometry {
        Some(p) => io::read_json(p)?,
        None => ctx.cfg.geometry_file()?,
    };
    let tol = tol.or(ctx.cfg.solver.quad_rel_tol).unwrap_or(DEFAULT_REL_TOL);
    let m = neumann_mutual_tol(&g.coil.to_loop()?, &g.squid.to_loop()?, tol)?;
    let l_i = g.coil_self_inductance().ok();
    ctx.report(
        "mutual.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "mutual",
            "m_h": m,
            "l_i_h": l_i,
            "eta2": l_i.map(|l| m / l),
            "rel_tol": tol,
        }),
    )
}

fn prepare(trace: ComplexTrace, background: bool) -> Result<(ComplexTrace, Option<BackgroundModel>)> {
    if !background {
        return Ok((trace, None));
    }
    let c = correct_background(&trace)?;
    if c.narrow_span {
        warn!("trace window spans fewer than 5 linewidths; background estimate is unreliable");
    }
    Ok((c.trace, Some(c.model)))
}

#[derive(Serialize)]
struct LinearReport {
    schema_version: u32,
    mode: &'static str,
    fit: ResonatorFit,
    background: Option<BackgroundModel>,
}

fn cmd_fit(ctx: &Ctx, mode: FitMode, input: &Path, background: bool) -> Result<()> {
    match mode {
        FitMode::Linear => {
            let (trace, bg) = prepare(io::read_trace_auto(input)?, background)?;
            let fit = fit_linear_resonance(&trace)?;
            if fit.overcoupled {
                warn!("resonator is overcoupled (Q_c < Q_i); Q_i carries a larger systematic error");
            }
            ctx.report("fit_linear.json", &LinearReport { schema_version: SCHEMA_VERSION, mode: "linear", fit, background: bg })
        }
        FitMode::Kerr => {
            let manifest = Manifest::load(input)?;
            if manifest.traces.iter().any(|e| e.attenuation_db.is_none() || e.power_dbm.is_none()) {
                return Err(Error::Config {
                    key: "traces[].attenuation_db".into(),
                    msg: "every sweep entry needs power_dbm and attenuation_db".into(),
                });
            }
            let traces = manifest
                .load_traces(input)?
                .into_iter()
                .map(|t| prepare(t, background).map(|p| p.0))
                .collect::<Result<Vec<_>>>()?;
            let fit = fit_kerr_power_sweep(&traces, ctx.cfg.photon_branch()?)?;
            ctx.report("fit_kerr.json", &json!({ "schema_version": SCHEMA_VERSION, "mode": "kerr", "fit": fit }))
        }
        FitMode::Tls => {
            let rows = io::read_columns(input, &["n_photons", "q_i"])?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let fit = fit_tls(&pts)?;
            ctx.report("fit_tls.json", &json!({ "schema_version": SCHEMA_VERSION, "mode": "tls", "fit": fit }))
        }
        FitMode::Flux => fit_flux(ctx, input, background),
    }
}

fn fit_flux(ctx: &Ctx, input: &Path, background: bool) -> Result<()> {
    let guess_ftr = ctx.cfg.ftr()?;
    let mut failed = Vec::new();
    let data: Vec<(f64, f64)> = if input.extension().is_some_and(|e| e == "csv") {
        io::read_columns(input, &["current_a", "f_r_hz"])?.iter().map(|r| (r[0], r[1])).collect()
    } else {
        let manifest = Manifest::load(input)?;
        let traces = manifest.load_traces(input)?;
        let mut pts = Vec::with_capacity(traces.len());
        for (k, t) in traces.into_iter().enumerate() {
            let Some(i) = t.meta.bias_current_a else {
                return Err(Error::Config { key: format!("traces[{k}].bias_current_a"), msg: "missing".into() });
            };
            match prepare(t, background).and_then(|(t, _)| fit_linear_resonance(&t)) {
                Ok(f) => pts.push((i, f.f_r)),
                Err(e) => {
                    info!("trace {k} at {i:e} A skipped: {e}");
                    failed.push(k);
                }
            }
        }
        pts
    };
    if !failed.is_empty() {
        warn!("{} of {} traces could not be fitted", failed.len(), failed.len() + data.len());
    }
    let cal = match ctx.cfg.calibration() {
        Ok(c) => c,
        Err(_) => extract_period(&data)?,
    };
    let fit = fit_tuning_curve(&data, &TuningFitGuess { ftr: guess_ftr, cal })?;
    if !fit.at_bound.is_empty() {
        warn!("parameters at a bound: {:?}", fit.at_bound);
    }
    let m = mutual_from_period(fit.i_phi0.abs())?;
    ctx.report(
        "fit_flux.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "mode": "flux",
            "parameters": {
                "scaling_A": fit.scaling_a,
                "alpha": fit.alpha,
                "I0_nA": fit.i0 * 1e9,
                "Lg_pH": fit.lg * 1e12,
                "beta_L": fit.beta_l,
                "I_off_uA": fit.i_off * 1e6,
                "I_Phi0_uA": fit.i_phi0 * 1e6,
                "M_pH": m * 1e12,
            },
            "rms_hz": fit.rms_hz,
            "iterations": fit.iterations,
            "at_bound": fit.at_bound,
            "points": data.len(),
            "failed_traces": failed,
        }),
    )
}

fn noise(ctx: &Ctx) -> Result<NoiseSpec> {
    NoiseSpec::new(ctx.cfg.synth.noise_sigma.unwrap_or(0.0), ctx.seed)
        .map_err(|e| Error::Config { key: "synth.noise_sigma".into(), msg: e.to_string() })
}

fn cmd_synth(ctx: &Ctx, scenario: Scenario) -> Result<()> {
    let s = &ctx.cfg.synth;
    let n_points = s.n_points.unwrap_or(801);
    let span_lw = s.span_linewidths.unwrap_or(10.0);
    let mut meta = json!({
        "schema_version": SCHEMA_VERSION,
        "rng": synth::RNG_NAME,
        "seed": ctx.seed,
    });
    match scenario {
        Scenario::Linear => {
            let p = ctx.cfg.notch()?;
            let bg = BackgroundModel { tau: s.delay_ns.unwrap_or(0.0) * 1e-9, f0: p.f_r, ..BackgroundModel::identity() };
            let freqs = synth::linear_grid(p.f_r, span_lw * p.f_r / p.q_l, n_points);
            let t = synth::gen_linear_trace(&p, &bg, &freqs, &noise(ctx)?, 0)?;
            io::write_trace_csv(&ctx.path("trace.csv"), &t)?;
            meta["scenario"] = json!("linear");
            meta["truth"] = json!({ "notch": p, "q_c_eff": p.q_c_eff(), "background": bg });
            meta["files"] = json!(["trace.csv"]);
        }
        Scenario::Sweep => {
            let d = ctx.cfg.duffing()?;
            let att = ctx.cfg.attenuation_db()?;
            let powers = ctx.cfg.kerr.powers_dBm.clone().ok_or_else(|| Error::Config {
                key: "kerr.powers_dBm".into(),
                msg: "missing required key".into(),
            })?;
            let span = span_lw * d.kappa / (2.0 * std::f64::consts::PI);
            let freqs = synth::linear_grid(d.f_r0, span, n_points);
            let sw = synth::gen_power_sweep(&d, &powers, att, &freqs, &noise(ctx)?, ctx.cfg.photon_branch()?)?;
            let mut entries = Vec::new();
            for (k, t) in sw.traces.iter().enumerate() {
                let file = format!("trace_{k:03}.csv");
                io::write_trace_csv(&ctx.path(&file), t)?;
                entries.push(ManifestEntry {
                    file,
                    power_dbm: t.meta.power_dbm,
                    attenuation_db: Some(att),
                    bias_current_a: None,
                });
            }
            io::write_json(&ctx.path("manifest.json"), &Manifest::new(entries))?;
            meta["scenario"] = json!("sweep");
            meta["truth"] = json!({ "duffing": d, "k_hz": d.k / (2.0 * std::f64::consts::PI) });
            meta["bistable"] = json!(sw.bistable);
            meta["files"] = json!(["manifest.json"]);
        }
        Scenario::Fluxmap => {
            let ftr = ctx.cfg.ftr()?;
            let cal = ctx.cfg.calibration()?;
            let p = ctx.cfg.notch()?;
            let (start, periods, _) = ctx.cfg.flux_window();
            let n = s.n_currents.unwrap_or(301).max(2);
            let mut currents: Vec<f64> = (0..n)
                .map(|k| cal.current_for(FLUX_QUANTUM * (start + periods * k as f64 / (n - 1) as f64)))
                .collect();
            if cal.i_phi0 < 0.0 {
                currents.reverse();
            }
            let q_i = 1.0 / (1.0 / p.q_l - p.phi.cos() / p.q_c_abs);
            let q = QModel { q_i, q_c_eff: p.q_c_eff(), phi: p.phi };
            let grid = TraceGrid { n_points, span_linewidths: span_lw };
            let map = synth::gen_flux_map(&ftr, &cal, &currents, &grid, &q, &noise(ctx)?, ctx.mode)?;
            let mut entries = Vec::new();
            for (k, pt) in map.points.iter().enumerate() {
                let file = format!("trace_{k:04}.csv");
                io::write_trace_csv(&ctx.path(&file), &pt.trace)?;
                entries.push(ManifestEntry { file, power_dbm: None, attenuation_db: None, bias_current_a: Some(pt.current) });
            }
            io::write_json(&ctx.path("manifest.json"), &Manifest::new(entries))?;
            let rows: Vec<Vec<f64>> = map.points.iter().map(|p| vec![p.current, p.f_r]).collect();
            io::write_csv(&ctx.path("tuning.csv"), &["current_a", "f_r_hz"], &rows)?;
            meta["scenario"] = json!("fluxmap");
            meta["truth"] = json!({ "ftr": ftr, "calibration": cal, "q": q });
            meta["branch_switches"] = json!(map.branch_switches);
            meta["files"] = json!(["manifest.json", "tuning.csv"]);
        }
        Scenario::Tls => {
            let m = ctx.cfg.tls_model()?;
            let t = &ctx.cfg.tls;
            let (lo, hi, n) = (t.n_min.unwrap_or(1e-3), t.n_max.unwrap_or(1e8), t.n_points.unwrap_or(111).max(2));
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Config { key: "tls.n_min".into(), msg: "need 0 < n_min < n_max".into() });
            }
            let ns: Vec<f64> =
                (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect();
            let pts = synth::gen_tls_points(&m, &ns, t.snr, ctx.seed)?;
            let rows: Vec<Vec<f64>> = pts.iter().map(|(n, q)| vec![*n, *q]).collect();
            io::write_csv(&ctx.path("tls.csv"), &["n_photons", "q_i"], &rows)?;
            meta["scenario"] = json!("tls");
            meta["truth"] = json!({ "tls": m, "qi0": m.qi0(), "qi_inf": m.qi_inf() });
            meta["files"] = json!(["tls.csv"]);
        }
    }
    ctx.report("synth.json", &meta)
}
