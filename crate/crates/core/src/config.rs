//! Run configuration (TOML). Keys carry their unit as a suffix; everything is
//! converted to SI here and nowhere else.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ftr::{CpwParams, FtrParams};
use crate::io::{GeometryFile, LoopSpec, SquareSpec};
use crate::magnetics::FluxCalibration;
use crate::s21::{DuffingParams, NotchParams, PhotonBranch, TlsModel};
use crate::squid::SquidParams;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub io: IoSection,
    #[serde(default)]
    pub resonator: ResonatorSection,
    #[serde(default)]
    pub kerr: KerrSection,
    #[serde(default)]
    pub tls: TlsSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub I0_nA: Option<f64>,
    pub alpha: Option<f64>,
    pub Lg_pH: Option<f64>,
    pub Cj1_fF: Option<f64>,
    pub Cj2_fF: Option<f64>,
    pub length_um: Option<f64>,
    pub Lr_pH: Option<f64>,
    pub Cr_fF: Option<f64>,
    pub scaling_A: Option<f64>,
    pub include_Cs: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub coil_side_um: Option<f64>,
    pub squid_side_um: Option<f64>,
    pub separation_um: Option<f64>,
    pub coil_wire_width_um: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub I_off_uA: Option<f64>,
    pub I_Phi0_uA: Option<f64>,
    pub attenuation_dB: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub start_Phi0: Option<f64>,
    pub periods: Option<f64>,
    pub points_per_period: Option<usize>,
    pub quad_rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: Option<String>,
    pub format: Option<String>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorSection {
    pub fr_GHz: Option<f64>,
    pub Qi: Option<f64>,
    pub Qc: Option<f64>,
    pub phi_rad: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KerrSection {
    pub K_kHz: Option<f64>,
    pub powers_dBm: Option<Vec<f64>>,
    pub branch: Option<String>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSection {
    pub delta0: Option<f64>,
    pub delta_tls: Option<f64>,
    pub beta: Option<f64>,
    pub n_star: Option<f64>,
    pub n_min: Option<f64>,
    pub n_max: Option<f64>,
    pub n_points: Option<usize>,
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub noise_sigma: Option<f64>,
    pub n_points: Option<usize>,
    pub span_linewidths: Option<f64>,
    pub delay_ns: Option<f64>,
    pub n_currents: Option<usize>,
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config { key: key.into(), msg: "missing required key".into() })
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config { key: key.into(), msg: format!("must be positive, got {v}") })
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            let key = e.span().map(|r| s[r].trim().to_string()).unwrap_or_default();
            Error::Config { key, msg: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { key: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml_str(&s)
    }

    pub fn squid(&self) -> Result<SquidParams> {
        let d = &self.device;
        let i0 = positive(need(d.I0_nA, "device.I0_nA")?, "device.I0_nA")? * 1e-9;
        let alpha = need(d.alpha, "device.alpha")?;
        let lg = need(d.Lg_pH, "device.Lg_pH")? * 1e-12;
        let cj1 = d.Cj1_fF.unwrap_or(0.0) * 1e-15;
        let cj2 = d.Cj2_fF.unwrap_or(0.0) * 1e-15;
        SquidParams::new(i0, alpha, lg, cj1, cj2)
            .map_err(|e| Error::Config { key: "device".into(), msg: e.to_string() })
    }

    pub fn cpw(&self) -> Result<CpwParams> {
        let d = &self.device;
        let l = positive(need(d.length_um, "device.length_um")?, "device.length_um")? * 1e-6;
        let lr = positive(need(d.Lr_pH, "device.Lr_pH")?, "device.Lr_pH")? * 1e-12;
        let cr = positive(need(d.Cr_fF, "device.Cr_fF")?, "device.Cr_fF")? * 1e-15;
        CpwParams::from_modal(l, lr, cr)
    }

    pub fn ftr(&self) -> Result<FtrParams> {
        Ok(FtrParams {
            cpw: self.cpw()?,
            squid: self.squid()?,
            scaling_a: positive(self.device.scaling_A.unwrap_or(1.0), "device.scaling_A")?,
            include_cs: self.device.include_Cs.unwrap_or(false),
        })
    }

    pub fn calibration(&self) -> Result<FluxCalibration> {
        let c = &self.calibration;
        let i_off = need(c.I_off_uA, "calibration.I_off_uA")? * 1e-6;
        let i_phi0 = need(c.I_Phi0_uA, "calibration.I_Phi0_uA")? * 1e-6;
        FluxCalibration::new(i_off, i_phi0)
            .map_err(|e| Error::Config { key: "calibration.I_Phi0_uA".into(), msg: e.to_string() })
    }

    /// Square coil at z = 0 and square SQUID loop at z = separation, both centred.
    pub fn geometry_file(&self) -> Result<GeometryFile> {
        let g = &self.geometry;
        let coil = positive(need(g.coil_side_um, "geometry.coil_side_um")?, "geometry.coil_side_um")? * 1e-6;
        let squid = positive(need(g.squid_side_um, "geometry.squid_side_um")?, "geometry.squid_side_um")? * 1e-6;
        let h = g.separation_um.unwrap_or(0.0) * 1e-6;
        Ok(GeometryFile {
            coil: LoopSpec::Square { square: SquareSpec { side_m: coil, center_m: [0.0, 0.0], z_m: 0.0 } },
            squid: LoopSpec::Square { square: SquareSpec { side_m: squid, center_m: [0.0, 0.0], z_m: h } },
            coil_wire_width_m: Some(g.coil_wire_width_um.unwrap_or(5.0) * 1e-6),
            coil_self_inductance_h: None,
        })
    }

    pub fn attenuation_db(&self) -> Result<f64> {
        need(self.calibration.attenuation_dB, "calibration.attenuation_dB")
    }

    /// (start in Phi0, periods, points per period).
    pub fn flux_window(&self) -> (f64, f64, usize) {
        let s = &self.solver;
        (s.start_Phi0.unwrap_or(-1.5), s.periods.unwrap_or(3.0), s.points_per_period.unwrap_or(200).max(2))
    }

    pub fn notch(&self) -> Result<NotchParams> {
        let r = &self.resonator;
        let fr = positive(need(r.fr_GHz, "resonator.fr_GHz")?, "resonator.fr_GHz")? * 1e9;
        let qi = positive(need(r.Qi, "resonator.Qi")?, "resonator.Qi")?;
        let qc = positive(need(r.Qc, "resonator.Qc")?, "resonator.Qc")?;
        Ok(NotchParams::from_qi_qc(fr, qi, qc, r.phi_rad.unwrap_or(0.0)))
    }

    pub fn duffing(&self) -> Result<DuffingParams> {
        let k = need(self.kerr.K_kHz, "kerr.K_kHz")? * 1e3 * 2.0 * std::f64::consts::PI;
        Ok(DuffingParams::from_notch(&self.notch()?, k))
    }

    pub fn photon_branch(&self) -> Result<PhotonBranch> {
        match self.kerr.branch.as_deref() {
            None | Some("low") => Ok(PhotonBranch::Low),
            Some("high") => Ok(PhotonBranch::High),
            Some(other) => Err(Error::Config { key: "kerr.branch".into(), msg: format!("expected low|high, got {other}") }),
        }
    }

    pub fn tls_model(&self) -> Result<TlsModel> {
        let t = &self.tls;
        let m = TlsModel {
            delta0: need(t.delta0, "tls.delta0")?,
            delta_tls: need(t.delta_tls, "tls.delta_tls")?,
            beta: need(t.beta, "tls.beta")?,
            n_star: need(t.n_star, "tls.n_star")?,
        };
        m.validate().map_err(|e| Error::Config { key: "tls".into(), msg: e.to_string() })?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANALYTIC: &str = r#"
[device]
I0_nA = 400
alpha = 0.33
Lg_pH = 697
length_um = 3259
Lr_pH = 881.2
Cr_fF = 354.2
"#;

    #[test]
    fn parses_and_converts_units() {
        let c = RunConfig::from_toml_str(ANALYTIC).unwrap();
        let f = c.ftr().unwrap();
        assert!((f.squid.i0 - 400e-9).abs() < 1e-20);
        assert!((f.squid.lg - 697e-12).abs() < 1e-22);
        assert!((f.squid.beta_l() - 0.27).abs() < 0.01);
        assert_eq!(f.scaling_a, 1.0);
    }

    #[test]
    fn missing_key_is_named() {
        let c = RunConfig::from_toml_str("[device]\nalpha = 0.3\nLg_pH = 1\n").unwrap();
        match c.squid() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "device.I0_nA"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml_str("[device]\nI0 = 400\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("I0"));
    }
}
