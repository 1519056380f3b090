use std::path::Path;
use std::process::{Command, Output};

use microgrid_core::acpf::{net_injection, newton_solve, NewtonOptions};
use microgrid_core::config::MicrogridConfig;
use microgrid_core::grid::{build_admittance, DemandSnapshot};

fn microgrid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microgrid"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Six-hour intervals keep the shipped grid small enough for quick runs.
const COARSE: &[&str] = &["--dt", "6", "--horizon", "2"];

fn with(base: &[&str], more: &[&str]) -> Vec<String> {
    base.iter().chain(more).map(|s| s.to_string()).collect()
}

fn run(out: &Path, args: Vec<String>) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    microgrid(out, &refs)
}

#[test]
fn periodic_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&a, with(COARSE, &["periodic"])));
    ok(&run(&b, with(COARSE, &["periodic"])));
    let ra = std::fs::read(a.join("reference.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("reference.json")).unwrap());
    let summary = std::fs::read_to_string(a.join("periodic_summary.txt")).unwrap();
    assert!(summary.contains("period: 4 intervals of 6 h"));
}

#[test]
fn simulate_nominal_stays_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&run(out, with(COARSE, &["periodic"])));
    let reference = out.join("reference.json");
    let o = run(out, with(COARSE, &["simulate", "--steps", "6", "--reference", reference.to_str().unwrap(), "--quiet"]));
    ok(&o);
    let mut rd = csv::Reader::from_path(out.join("records.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    let dist = headers.iter().position(|h| h == "distance").unwrap();
    let v = headers.iter().position(|h| h == "v_check").unwrap();
    let mut rows = 0;
    for r in rd.records() {
        let r = r.unwrap();
        assert!(r[dist].parse::<f64>().unwrap() <= 1e-6);
        assert!(r[v].parse::<f64>().unwrap() <= 1e-4);
        rows += 1;
    }
    assert_eq!(rows, 6);
    assert!(out.join("records.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("max distance to reference"));

    let o = run(out, with(COARSE, &["nmpc", "--step", "1", "--reference", reference.to_str().unwrap()]));
    ok(&o);
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("subproblem_solution.json")).unwrap()).unwrap();
    assert_eq!(sol["reference_candidate_violations"].as_array().unwrap().len(), 0);
    assert!(std::fs::read_to_string(out.join("subproblem.txt")).unwrap().len() > 100);
}

#[test]
fn check_pf_on_newton_setpoint() {
    let cfg = MicrogridConfig::six_bus();
    let spec = cfg.grid_spec().unwrap();
    let y = build_admittance(&spec).unwrap();
    let mut demand = DemandSnapshot::zeros(6);
    demand.p_d[2] = 0.4;
    let setpoint = microgrid_core::grid::PowerSetpoint { p_g: vec![0.0, 1.0], q_g: vec![0.0, 0.2], p_b: vec![0.3], q_b: vec![0.1] };
    // No device sits at the reference bus: give it the demand that closes the
    // Newton solution, so the setpoint lies on the power flow manifold.
    let (p, q) = net_injection(&spec, &setpoint, &demand);
    let z = newton_solve(&spec, &y, &p, &q, &NewtonOptions::default()).unwrap();
    let r = spec.reference_bus;
    let mut demand_on = demand.clone();
    demand_on.p_d[r] = -z.p[r];
    demand_on.q_d[r] = -z.q[r];
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("setpoint.json");
    let body = serde_json::json!({ "setpoint": setpoint, "demand": demand_on, "on": [false, true] });
    std::fs::write(&file, body.to_string()).unwrap();
    let o = microgrid(dir.path(), &["check-pf", file.to_str().unwrap()]);
    ok(&o);
    let res: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("check_pf.json")).unwrap()).unwrap();
    assert!(res["v_check"].as_f64().unwrap() <= 1e-10, "{}", res["v_check"]);
}

#[test]
fn exit_codes_name_the_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let bad = out.join("bad.toml");
    std::fs::write(&bad, "grid = 3").unwrap();
    let o = microgrid(out, &["--config", bad.to_str().unwrap(), "periodic"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));

    let o = microgrid(out, &["--config", out.join("missing.toml").to_str().unwrap(), "periodic"]);
    assert_eq!(o.status.code(), Some(3));

    let o = microgrid(out, &["simulate", "--reference", out.join("none.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let o = microgrid(out, &["--dt", "5", "periodic"]);
    assert_eq!(o.status.code(), Some(2));

    let o = microgrid(out, &["--dt", "6", "--horizon", "2", "simulate", "--scenario", "sunny", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
