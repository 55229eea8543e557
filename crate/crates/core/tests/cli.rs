use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ftr_core::io::read_columns;

const ANALYTIC: &str = "../../configs/analytic_200um.toml";
const INPUT: &str = "../../configs/input_200um.toml";

fn cfg(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(name)
}

fn ftr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftr")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn screen_reports_beta_of_analytic_column() {
    let d = tempfile::tempdir().unwrap();
    let o = ftr(&["screen", "--config", s(&cfg(ANALYTIC)), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&d.path().join("screen.json"));
    assert_eq!(r["schema_version"], 1);
    assert!((r["beta_L"].as_f64().unwrap() - 0.27).abs() < 0.01);
    let rows = read_columns(&d.path().join("screen.csv"), &["phi_e_Phi0", "phi_s_Phi0"]).unwrap();
    assert_eq!(rows.len(), 601);
}

#[test]
fn screen_without_loop_inductance_is_identity() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.toml");
    std::fs::write(&c, "[device]\nI0_nA = 400\nalpha = 0.2\nLg_pH = 0\n").unwrap();
    let o = ftr(&["screen", "--config", s(&c), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for r in read_columns(&d.path().join("screen.csv"), &["phi_e_Phi0", "phi_s_Phi0"]).unwrap() {
        assert!((r[0] - r[1]).abs() < 1e-12);
    }
}

#[test]
fn screen_json_format() {
    let d = tempfile::tempdir().unwrap();
    let o = ftr(&["screen", "--config", s(&cfg(ANALYTIC)), "--out", s(d.path()), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&d.path().join("screen_rows.json"));
    assert_eq!(r["columns"]["phi_e_Phi0"].as_array().unwrap().len(), 601);
}

#[test]
fn missing_key_exits_1_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.toml");
    std::fs::write(&c, "[device]\nalpha = 0.3\nLg_pH = 700\n").unwrap();
    let o = ftr(&["screen", "--config", s(&c), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("device.I0_nA"));
}

#[test]
fn unknown_key_and_unknown_scenario_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.toml");
    std::fs::write(&c, "[device]\nI0 = 400\n").unwrap();
    assert_eq!(ftr(&["screen", "--config", s(&c)]).status.code(), Some(1));
    let o = ftr(&["synth", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values"));
}

#[test]
fn tune_exact_differs_slightly_from_closed_form() {
    let d = tempfile::tempdir().unwrap();
    let (a, e) = (d.path().join("a"), d.path().join("e"));
    assert_eq!(ftr(&["tune", "--config", s(&cfg(INPUT)), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(ftr(&["tune", "--config", s(&cfg(INPUT)), "--out", s(&e), "--exact"]).status.code(), Some(0));
    let fa = read_columns(&a.join("tune.csv"), &["current_uA", "f_r_hz", "gamma"]).unwrap();
    let fe = read_columns(&e.join("tune.csv"), &["f_r_hz"]).unwrap();
    let mut max_rel: f64 = 0.0;
    for (x, y) in fa.iter().zip(&fe) {
        let rel = (y[0] - x[1]).abs() / x[1];
        // both agree to first order in gamma
        assert!(rel < x[2] * x[2], "rel {rel} gamma {}", x[2]);
        max_rel = max_rel.max(rel);
    }
    assert!(max_rel > 1e-6);
    // period of the tuning curve in input current
    let i_phi0 = 17.8;
    let n = 200;
    assert!((fa[n][0] - fa[0][0] - i_phi0).abs() < 1e-9);
    assert!((fa[n][1] - fa[0][1]).abs() < 1e-6 * fa[0][1]);
}

#[test]
fn mutual_geometry_files() {
    let d = tempfile::tempdir().unwrap();
    let o = ftr(&["mutual", s(&cfg("../../configs/geometry_flipchip.json")), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&d.path().join("mutual.json"));
    assert!((r["m_h"].as_f64().unwrap() - 145.487e-12).abs() < 0.01e-12);
    assert!((r["eta2"].as_f64().unwrap() - 0.257).abs() < 0.001);

    let c = d.path().join("same.json");
    std::fs::write(&c, r#"{"coil": {"square": {"side_m": 1e-4}}, "squid": {"square": {"side_m": 1e-4}}}"#).unwrap();
    assert_eq!(ftr(&["mutual", s(&c), "--out", s(d.path())]).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    for (dir, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = ftr(&["synth", "linear", "--config", s(&cfg(INPUT)), "--seed", seed, "--out", s(dir)]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |p: &Path| std::fs::read(p.join("trace.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn linear_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.toml");
    std::fs::write(&c, "[resonator]\nfr_GHz = 6\nQi = 5000\nQc = 490\nphi_rad = 0.1\n[synth]\ndelay_ns = 25\n").unwrap();
    assert_eq!(ftr(&["synth", "linear", "--config", s(&c), "--out", s(d.path())]).status.code(), Some(0));
    let o = ftr(&["fit", "linear", s(&d.path().join("trace.csv")), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let f = &json(&d.path().join("fit_linear.json"))["fit"];
    assert!((f["f_r"].as_f64().unwrap() - 6e9).abs() < 1.0);
    assert!((f["q_i"].as_f64().unwrap() - 5000.0).abs() < 0.5);
    assert!((f["q_c_eff"].as_f64().unwrap() - 490.0).abs() < 0.05);
}

#[test]
fn kerr_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let o = ftr(&["synth", "sweep", "--config", s(&cfg(INPUT)), "--seed", "3", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0));
    let o = ftr(&["fit", "kerr", s(&d.path().join("manifest.json")), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let k = json(&d.path().join("fit_kerr.json"))["fit"]["k_hz"].as_f64().unwrap();
    assert!((k / 216e3 - 1.0).abs() < 0.02, "{k}");
}

#[test]
fn kerr_requires_attenuation() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("t.csv"), "freq_hz,s21_re,s21_im\n1,1,0\n").unwrap();
    std::fs::write(
        d.path().join("m.json"),
        r#"{"schema_version": 1, "traces": [{"file": "t.csv", "power_dbm": -80}]}"#,
    )
    .unwrap();
    let o = ftr(&["fit", "kerr", s(&d.path().join("m.json")), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tls_round_trip() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(ftr(&["synth", "tls", "--config", s(&cfg(INPUT)), "--out", s(d.path())]).status.code(), Some(0));
    let o = ftr(&["fit", "tls", s(&d.path().join("tls.csv")), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0));
    let m = &json(&d.path().join("fit_tls.json"))["fit"]["model"];
    assert!((m["delta0"].as_f64().unwrap() / 3.4e-7 - 1.0).abs() < 0.05);
    assert!((m["beta"].as_f64().unwrap() / 0.295 - 1.0).abs() < 0.1);
}

#[test]
fn fluxmap_is_ingestible_by_flux_fit() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.toml");
    let base = std::fs::read_to_string(cfg(INPUT)).unwrap();
    std::fs::write(&c, base.replace("n_currents = 301", "n_currents = 91").replace("n_points = 801", "n_points = 201"))
        .unwrap();
    let o = ftr(&["synth", "fluxmap", "--config", s(&c), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // f_r stays continuous across the map: no step larger than a few grid steps' worth of slope
    let f = read_columns(&d.path().join("tuning.csv"), &["f_r_hz"]).unwrap();
    let steps: Vec<f64> = f.windows(2).map(|w| (w[1][0] - w[0][0]).abs()).collect();
    let span = f.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max) - f.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
    assert!(steps.iter().all(|s| *s < 0.5 * span));
    let o = ftr(&["fit", "flux", s(&d.path().join("manifest.json")), "--config", s(&cfg(ANALYTIC)), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let p = &json(&d.path().join("fit_flux.json"))["parameters"];
    for (k, v) in [("I0_nA", 361.0), ("alpha", 0.3), ("Lg_pH", 776.0), ("scaling_A", 1.1), ("I_Phi0_uA", 17.8)] {
        assert!((p[k].as_f64().unwrap() / v - 1.0).abs() < 0.05, "{k}: {}", p[k]);
    }
}
