//! File formats: trace CSV, sweep manifests, geometry files and JSON reports.
//! CSV numerics are written with 17 significant digits so they read back bit-exact.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetics::{square_coil_self_inductance, PolylineLoop};
use crate::s21::{ComplexTrace, TraceMeta};
use crate::synth::dbm_to_watts;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest exact text form: 17 significant digits in scientific notation.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Format(format!("row has {} columns, header {}", r.len(), header.len())));
        }
        w.write_record(r.iter().map(|v| fmt_num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the named numeric columns of a headed CSV file.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = r.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Format(format!("{}: missing column `{n}`", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = idx
            .iter()
            .map(|&i| {
                let s = rec.get(i).unwrap_or("");
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}: row {}: `{s}` is not a number", path.display(), line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

fn has_column(path: &Path, name: &str) -> Result<bool> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    Ok(r.headers()?.iter().any(|h| h == name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceColumns {
    /// `freq_hz, s21_re, s21_im`
    #[default]
    ReIm,
    /// `freq_hz, mag_db, phase_rad`
    MagDbPhase,
}

pub fn read_trace_csv(path: &Path, cols: TraceColumns) -> Result<ComplexTrace> {
    let rows = match cols {
        TraceColumns::ReIm => read_columns(path, &["freq_hz", "s21_re", "s21_im"])?,
        TraceColumns::MagDbPhase => read_columns(path, &["freq_hz", "mag_db", "phase_rad"])?,
    };
    let freqs = rows.iter().map(|r| r[0]).collect();
    let s21 = rows
        .iter()
        .map(|r| match cols {
            TraceColumns::ReIm => Complex64::new(r[1], r[2]),
            TraceColumns::MagDbPhase => Complex64::from_polar(10f64.powf(r[1] / 20.0), r[2]),
        })
        .collect();
    ComplexTrace::new(freqs, s21)
}

/// Picks the column layout from the header.
pub fn read_trace_auto(path: &Path) -> Result<ComplexTrace> {
    if has_column(path, "mag_db")? {
        read_trace_csv(path, TraceColumns::MagDbPhase)
    } else {
        read_trace_csv(path, TraceColumns::ReIm)
    }
}

pub fn write_trace_csv(path: &Path, trace: &ComplexTrace) -> Result<()> {
    let rows: Vec<Vec<f64>> = trace.freqs.iter().zip(&trace.s21).map(|(f, z)| vec![*f, z.re, z.im]).collect();
    write_csv(path, &["freq_hz", "s21_re", "s21_im"], &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Trace CSV, relative to the manifest.
    pub file: String,
    #[serde(default)]
    pub power_dbm: Option<f64>,
    #[serde(default)]
    pub attenuation_db: Option<f64>,
    #[serde(default)]
    pub bias_current_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub traces: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(traces: Vec<ManifestEntry>) -> Self {
        Manifest { schema_version: SCHEMA_VERSION, traces }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported manifest schema_version {}", m.schema_version)));
        }
        Ok(m)
    }

    /// Loads every listed trace. Power at the device is set only when both the source
    /// power and the line attenuation are given.
    pub fn load_traces(&self, manifest_path: &Path) -> Result<Vec<ComplexTrace>> {
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        self.traces
            .iter()
            .map(|e| {
                let mut t = read_trace_auto(&base.join(&e.file))?;
                t.meta = TraceMeta {
                    bias_current_a: e.bias_current_a,
                    attenuation_db: e.attenuation_db,
                    power_dbm: e.power_dbm,
                };
                if let (Some(p), Some(a)) = (e.power_dbm, e.attenuation_db) {
                    t = t.with_power(dbm_to_watts(p - a));
                }
                Ok(t)
            })
            .collect()
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareSpec {
    pub side_m: f64,
    #[serde(default)]
    pub center_m: [f64; 2],
    #[serde(default)]
    pub z_m: f64,
}

/// Either an axis-aligned square or an explicit vertex list (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoopSpec {
    Square { square: SquareSpec },
    Polyline(PolylineLoop),
}

impl LoopSpec {
    pub fn to_loop(&self) -> Result<PolylineLoop> {
        match self {
            LoopSpec::Square { square: s } => PolylineLoop::square(s.side_m, s.center_m[0], s.center_m[1], s.z_m),
            LoopSpec::Polyline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub coil: LoopSpec,
    pub squid: LoopSpec,
    /// Coil wire width for the square-coil self-inductance (m).
    #[serde(default)]
    pub coil_wire_width_m: Option<f64>,
    /// Overrides the computed coil self-inductance (H).
    #[serde(default)]
    pub coil_self_inductance_h: Option<f64>,
}

impl GeometryFile {
    /// Coil self-inductance: the explicit value, else the square-coil formula.
    pub fn coil_self_inductance(&self) -> Result<f64> {
        if let Some(l) = self.coil_self_inductance_h {
            return Ok(l);
        }
        match (&self.coil, self.coil_wire_width_m) {
            (LoopSpec::Square { square }, Some(w)) => square_coil_self_inductance(square.side_m, w),
            _ => Err(Error::Config {
                key: "coil_self_inductance_h".into(),
                msg: "give it explicitly or use a square coil with coil_wire_width_m".into(),
            }),
        }
    }
}
