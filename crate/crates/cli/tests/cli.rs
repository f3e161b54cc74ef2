use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wentzell_cli::config::{Domain, Scheme, TimeGrid};
use wentzell_cli::RunConfig;

fn wentzell(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wentzell"));
    cmd.args(args).arg("--out").arg(dir.join("out")).arg("--quiet");
    if let Some(text) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn error_body(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(text.trim()).expect("stderr is one JSON object");
    v["error"].clone()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "domain": {"kind": "interval", "a": 0, "b": 1, "n": 32},
  "coefficients": {"alpha": "1 + 0.5*x", "delta": 0.5},
  "eigen_count": 6,
  "times": {"kind": "log", "from": 1e-5, "to": 0.5, "count": 12},
  "initial": {"u1": "exp(-50*(x-0.4)^2)"}
}"#;

#[test]
fn config_round_trips() {
    let full = r#"{
      "domain": {"kind": "rectangle", "lx": 1, "ly": 0.5, "nx": 8, "ny": 4},
      "coefficients": {
        "q": [[1, "0.1*x"], ["0.1*x", 2]],
        "alpha": {"per_cell": [1, 2, 3]},
        "beta": 2,
        "gamma": "sin(y)",
        "delta": 0,
        "eta": 0.25,
        "kappa_q": 0.5
      },
      "mass": "lumped",
      "order_power": 2,
      "eigen_count": 4,
      "times": {"kind": "list", "values": [0, 0.1, 1]},
      "scheme": {"kind": "theta", "theta": 0.5, "dt": 0.001, "startup_steps": 2},
      "initial": {"u1": "x*y", "u2": 1.5},
      "output_dir": "runs/a",
      "seed": 7,
      "plots": false,
      "dump_eigenvectors": true
    }"#;
    let c = RunConfig::parse(full).unwrap();
    assert_eq!(c.order_power, 2);
    assert!(matches!(c.domain, Domain::Rectangle { nx: 8, .. }));
    assert!(matches!(c.scheme, Scheme::Theta { startup_steps: 2, .. }));
    assert_eq!(RunConfig::parse(&c.to_json()).unwrap(), c);

    let r = RunConfig::reference();
    assert_eq!(RunConfig::parse(&r.to_json()).unwrap(), r);

    let minimal = RunConfig::parse(r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4}}"#).unwrap();
    assert_eq!(minimal.order_power, 1);
    assert_eq!(minimal.times, TimeGrid::default());
    assert_eq!(RunConfig::parse(&minimal.to_json()).unwrap(), minimal);
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for bad in [
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4}, "extra": 1}"#,
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4, "m": 2}}"#,
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4}, "coefficients": {"gama": 1}}"#,
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4}, "scheme": {"kind": "theta", "theta": 1, "dt": 1, "h": 1}}"#,
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 4}, "initial": {"u1": 1, "u3": 1}}"#,
        r#"{"domain": {"kind": "disc", "r": 1}}"#,
    ] {
        assert!(RunConfig::parse(bad).is_err(), "accepted {bad}");
    }
}

#[test]
fn time_grids_are_checked() {
    let mut c = RunConfig::reference();
    c.times = TimeGrid::Linear { from: 0.0, to: 1.0, count: 5 };
    assert_eq!(c.time_values().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    c.times = TimeGrid::List { values: vec![0.5, 0.1] };
    assert!(c.time_values().is_err());
    c.times = TimeGrid::Log { from: 0.0, to: 1.0, count: 3 };
    assert!(c.time_values().is_err());
}

#[test]
fn negative_delta_fails_validation_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 16}, "coefficients": {"delta": -1}}"#;
    let out = wentzell(&["validate"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(1));
    let e = error_body(&out);
    assert_eq!(e["code"], 1);
    assert_eq!(e["kind"], "hypothesis");
    assert!(e["message"].as_str().unwrap().contains("delta >= 0 on the boundary"));
    let report = read_json(&dir.path().join("out/validation.json"));
    assert_eq!(report["passed"], false);

    // Every other command refuses the same configuration.
    let out = wentzell(&["eigs"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn valid_configuration_passes_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = wentzell(&["validate"], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/validation.json"));
    assert_eq!(report["passed"], true);
    assert!(report["symbol"]["lower_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn too_many_eigenpairs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 16}, "eigen_count": 18}"#;
    let out = wentzell(&["eigs"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let e = error_body(&out);
    assert_eq!(e["code"], 2);
    assert!(e["message"].as_str().unwrap().contains("1..=17"));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = wentzell(&["eigs"], Some(r#"{"domain": {"kind": "interval"}}"#), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_body(&out)["kind"], "config");

    let out = wentzell(&["eigs"], None, dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_wentzell"))
        .args(["verify", "10", "--quiet", "--out"])
        .arg(dir.path())
        .env("WENTZELL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn assemble_exports_symmetric_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let out = wentzell(&["assemble"], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sys = read_json(&dir.path().join("out/system.json"));
    assert_eq!(sys["nodes"], 33);
    assert_eq!(sys["boundary_nodes"], 2);
    assert!(sys["a_asymmetry"].as_f64().unwrap() <= 1e-12);
    assert_eq!(sys["coefficients_sha256"].as_str().unwrap().len(), 64);

    // Entries of M_H sum to |Ω| + ∫_Γ 1/β = 1 + 2.
    let mh = fs::read_to_string(dir.path().join("out/M_H.csv")).unwrap();
    let mut lines = mh.lines();
    assert_eq!(lines.next(), Some("row,col,value"));
    let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 3.0).abs() < 1e-12, "{total}");

    let mesh = read_json(&dir.path().join("out/mesh.json"));
    assert_eq!(mesh["nodes"].as_array().unwrap().len(), 33);
}

#[test]
fn eigs_writes_values_residuals_and_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 32}, "eigen_count": 5, "dump_eigenvectors": true}"#;
    let out = wentzell(&["eigs"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/eigenvalues.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,lambda,residual");
    assert_eq!(rows.len(), 6);
    let summary = read_json(&dir.path().join("out/eigen_summary.json"));
    assert_eq!(summary["kernel_dimension"], 1);
    assert!(summary["max_residual"].as_f64().unwrap() < 1e-10);
    let vecs = fs::read_to_string(dir.path().join("out/eigenvectors.csv")).unwrap();
    assert_eq!(vecs.lines().count(), 1 + 5 * 33);
}

#[test]
fn oracle_table_agrees_on_a_moderate_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"domain": {"kind": "interval", "a": 0, "b": 2, "n": 128},
                 "coefficients": {"q": 1.5, "beta": 2, "gamma": 1, "delta": 0.25}, "eigen_count": 5}"#;
    let out = wentzell(&["oracle"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,oracle,discrete,relative_error"));
    let errs: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 5);
    assert!(errs.iter().all(|&e| e < 1e-2), "{errs:?}");
}

#[test]
fn oracle_rejects_unsupported_settings() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        r#"{"domain": {"kind": "rectangle", "lx": 1, "ly": 1, "nx": 8, "ny": 8}}"#,
        r#"{"domain": {"kind": "interval", "a": 0, "b": 1, "n": 16}, "coefficients": {"alpha": "1 + x"}}"#,
    ] {
        let out = wentzell(&["oracle"], Some(cfg), dir.path());
        assert_eq!(out.status.code(), Some(2), "{cfg}");
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn evolve_is_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = wentzell(&["evolve"], Some(SMALL), dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (files(&a.path().join("out")), files(&b.path().join("out")));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["diagnostics.json", "minimum.svg", "snapshots.svg", "trajectory.csv"]);
    assert_eq!(fa, fb);
}

#[test]
fn evolve_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = wentzell(&["evolve"], Some(SMALL), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let d = read_json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(d["regime"], "stable");
    let l1 = d["lambda1"].as_f64().unwrap();
    assert!(l1 > 0.0);
    let traj = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("t,node_id,value,component"));
    // 12 times x (33 interior + 2 boundary rows).
    assert_eq!(lines.count(), 12 * 35);
    let svg = fs::read_to_string(dir.path().join("out/snapshots.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn theta_scheme_matches_spectral_evolution() {
    let conservative = r#"{
      "domain": {"kind": "interval", "a": 0, "b": 1, "n": 32},
      "times": {"kind": "list", "values": [0, 0.001, 0.01, 0.05]},
      "initial": {"u1": "x^2", "u2": 0.5},
      "plots": false
    }"#;
    let theta = conservative.replace(
        r#""plots": false"#,
        r#""plots": false, "scheme": {"kind": "theta", "theta": 0.5, "dt": 1e-5, "startup_steps": 2}"#,
    );
    let s = tempfile::tempdir().unwrap();
    let t = tempfile::tempdir().unwrap();
    assert_eq!(wentzell(&["evolve"], Some(conservative), s.path()).status.code(), Some(0));
    assert_eq!(wentzell(&["evolve"], Some(&theta), t.path()).status.code(), Some(0));
    let values = |dir: &Path| -> Vec<f64> {
        fs::read_to_string(dir.join("out/trajectory.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    let (vs, vt) = (values(s.path()), values(t.path()));
    assert_eq!(vs.len(), vt.len());
    let gap = vs.iter().zip(&vt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-5, "{gap}");

    // Decoupled data conserve the pairing under both schemes.
    for dir in [s.path(), t.path()] {
        let d = read_json(&dir.join("out/diagnostics.json"));
        assert_eq!(d["regime"], "conservative");
        let (p0, p1) = (d["pairing_start"].as_f64().unwrap(), d["pairing_end"].as_f64().unwrap());
        assert!((p0 - p1).abs() <= 1e-10 * p0.abs(), "{p0} {p1}");
    }
}

#[test]
fn rectangle_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "domain": {"kind": "rectangle", "lx": 1, "ly": 1, "nx": 6, "ny": 6},
      "coefficients": {"q": [[1, 0.2], [0.2, 1]]},
      "times": {"kind": "linear", "from": 0, "to": 0.01, "count": 5},
      "initial": {"u1": "cos(3*x)*y"}
    }"#;
    for cmd in ["validate", "assemble", "eigs", "evolve"] {
        let out = wentzell(&[cmd], Some(cfg), dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn verify_runs_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out = wentzell(&["verify", "10"], None, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("out/verify.json"));
    assert_eq!(v["passed"], true);
    assert_eq!(v["criteria"][0]["id"], 10);
    assert!(v["criteria"][0].get("seconds").is_none());

    let out = wentzell(&["verify", "99"], None, dir.path());
    assert_eq!(out.status.code(), Some(2));
}
