use std::path::Path;

use serde_json::{json, Value};

use scatrec::harness::{parse_config, run_experiment, SweepResult};
use scatrec::special::lambda_const;
use scatrec::spectral::load_field;

fn run(config: Value, dir: &Path, workers: usize) -> SweepResult {
    let cfg = parse_config(&config.to_string(), dir).expect("valid config");
    run_experiment(&cfg, workers).expect("experiment runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Cheap 1-D instance: quintic power, wide box, short horizon.
fn solver_1d() -> Value {
    json!({
        "grid": { "kind": "fixed", "n": 512, "half_width": 32.0 },
        "time": { "kind": "scaled", "tau": 100.0, "delta": 0.1 },
        "cauchy_tolerance": 0.05
    })
}

fn bump_coefficient() -> Value {
    json!({ "kind": "gaussian", "base": 1.0, "bumps": [{ "amplitude": 0.5, "width": 1.0 }] })
}

#[test]
fn lambda_sweep_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let ps = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let result = run(json!({ "experiment": "lambda", "p_list": ps }), dir.path(), 2);
    assert!(result.pass);
    let csv = read(&dir.path().join("out/lambda.csv"));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("d,p,lambda,derivative"));
    for (line, p) in lines.zip(ps) {
        let value: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let exact = lambda_const(3, p).unwrap().value;
        assert!((value - exact).abs() <= 1e-10 * exact);
    }
    let json: Value = serde_json::from_str(&read(&dir.path().join("out/lambda.json"))).unwrap();
    assert_eq!(json["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(json["provenance"]["code_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn reconstruction_is_deterministic_across_worker_counts() {
    let config = json!({
        "experiment": "reconstruct", "dim": 1, "p": 4.0, "sigmas": [0.5],
        "lattice": { "min": -1.0, "max": 1.0, "count": 5 },
        "coefficient": bump_coefficient(), "solver": solver_1d()
    });
    let outputs: Vec<String> = [1, 1, 4]
        .iter()
        .map(|&workers| {
            let dir = tempfile::tempdir().unwrap();
            run(config.clone(), dir.path(), workers);
            read(&dir.path().join("out/reconstruct.csv"))
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[0].lines().count(), 6);
    assert!(outputs[0].lines().skip(1).all(|l| l.ends_with(",ok")), "{}", outputs[0]);
}

#[test]
fn born_gap_reports_slope_and_pass_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "experiment": "born-gap", "dim": 1, "p": 5.0, "sigmas": [0.4, 0.3, 0.2],
        "solver": {
            "grid": { "kind": "scaled", "n": 256, "box_factor": 16.0 },
            "time": { "kind": "scaled", "tau": 8.0, "delta": 0.05 }
        }
    });
    let result = run(config, dir.path(), 2);
    let slope = &result.slopes[0];
    assert_eq!(slope.name, "born gap rate");
    assert!(slope.fit.residual.is_finite());
    assert_eq!(result.check("born gap rate").unwrap().pass, slope.fit.slope >= 6.5);
    assert_eq!(result.column("gap").len(), 3);
}

#[test]
fn stability_report_is_fully_populated() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "experiment": "stability", "dim": 1, "p": 4.0, "sigma": 0.5,
        "centers": [[-0.5], [0.0], [0.5]],
        "coefficient": bump_coefficient(),
        "perturbation": { "amplitudes": [0.1], "width": 1.0 },
        "solver": solver_1d()
    });
    let result = run(config, dir.path(), 2);
    let json: Value = serde_json::from_str(&read(&dir.path().join("out/stability.json"))).unwrap();
    let report = &json["details"]["reports"][0]["report"];
    for field in ["sup_diff", "true_sup_diff", "op_norm_est", "rhs_bound", "sigma_used"] {
        let v = report[field].as_f64().unwrap_or_else(|| panic!("{field} missing"));
        assert!(v.is_finite() && v > 0.0, "{field} = {v}");
    }
    assert!(report["slopes"].is_array());
    assert!(json["details"]["fitted_constant"].as_f64().unwrap() > 0.0);
    assert!(result.check("stability inequality").unwrap().pass);
}

#[test]
fn scatter_writes_record_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "experiment": "scatter", "p": 3.0, "sigma": 0.5, "x0": [0.0],
        "coefficient": bump_coefficient(),
        "grid": { "d": 1, "n": 256, "L": 16.0 }, "T": 4.0, "dt": 0.01,
        "save_field": true
    });
    let result = run(config, dir.path(), 1);
    let out = dir.path().join("out");
    let record: Value = serde_json::from_str(&read(&out.join("record.json"))).unwrap();
    assert!(record["pairing"].is_array() || record["pairing"].is_object());
    assert_eq!(record["accepted"].as_bool().unwrap(), result.pass);
    let field = load_field(&out.join("u_plus.nlsf")).unwrap();
    assert_eq!(field.grid().points_per_axis(), 256);
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 4, "no temporary files are left behind: {names:?}");
}

#[test]
fn convergence_study_is_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "experiment": "convergence", "p": 3.0, "sigma": 0.5,
        "coefficient": bump_coefficient(),
        "grid": { "d": 1, "n": 256, "L": 16.0 }, "T": 1.0, "dt_list": [0.02, 0.01, 0.005]
    });
    let result = run(config, dir.path(), 3);
    assert!(result.pass, "{:?}", result.checks);
}
