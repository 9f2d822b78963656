use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn relctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relctl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_GRID: &str = "\
[probe]
T = 1.0

[sweep]
a_steps = 4
T_steps = 4
theta_steps = 3
phi_steps = 4
curve_a = [0.0, 1.0]
curve_T_steps = 5
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn convert_units_reports_about_1e16_g() {
    let d = TempDir::new().unwrap();
    let o = relctl(&["convert-units", "--a", "1", "--omega", "1e9"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("9.737439100483556e15 g"), "{s}");
}

#[test]
fn convert_units_needs_omega() {
    let d = TempDir::new().unwrap();
    let o = relctl(&["convert-units", "--a", "1"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--omega"));
}

#[test]
fn simulate_without_coupling_leaves_state_unchanged() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.toml", "[probe]\nT = 1.0\ncoupling = 0.0\n\n[target]\ncoupling = 0.0\n");
    let o = relctl(&["simulate", "--config", &cfg], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("d_theta = 0, d_phi = 0"), "{s}");
    let block = |name: &str| -> String {
        s.lines()
            .skip_while(|l| *l != name)
            .skip(1)
            .take(2)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(block("initial state"), block("final state"));
}

#[test]
fn bad_input_exits_with_one_and_names_the_problem() {
    let d = TempDir::new().unwrap();
    let o = relctl(&["simulate", "--config", "missing.toml"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.toml"));

    let cfg = write(d.path(), "c.toml", "[target]\nx = 9.0\n");
    let o = relctl(&["simulate", "--config", &cfg], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("target.x"), "{}", stderr(&o));

    let cfg = write(d.path(), "u.toml", "[probe]\nspeed = 1.0\n");
    let o = relctl(&["simulate", "--config", &cfg], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("speed"));

    let o = relctl(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_with_two() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "c.toml",
        "[cavity]\nmodes = 1\n\n[numerics]\nmax_modes = 2\nmode_tol = 1e-300\n",
    );
    let o = relctl(&["simulate", "--config", &cfg], d.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn maximize_is_byte_identical_across_runs_and_threads() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.toml", SMALL_GRID);
    let before = fs::read(&cfg).unwrap();
    let mut outputs = Vec::new();
    for (dir, threads) in [("r1", "1"), ("r2", "1"), ("r4", "4")] {
        let o = relctl(&["maximize", "--config", &cfg, "--out", dir, "--threads", threads], d.path());
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(d.path().join(dir).join("maximize.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(fs::read(&cfg).unwrap(), before);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("r1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "maximize");
    assert_eq!(manifest["outputs"][0]["file"], "maximize.csv");
    assert_eq!(
        manifest["outputs"][0]["sha256"].as_str().unwrap(),
        relctl::output::sha256_hex(&outputs[0])
    );
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);
    // poles carry no Δφ objective
    assert_eq!(manifest["warnings"], 8);
}

#[test]
fn sweep_writes_curves_and_manifest() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.toml", SMALL_GRID);
    let o = relctl(&["sweep", "--config", &cfg, "--out", "s"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "a,T,theta0,phi0,d_theta,d_phi,purity,argmax_a,argmax_T,flags");
    assert_eq!(lines.len(), 1 + 2 * 5);
    assert!(!csv.contains('\r'));
    assert!(lines[1].starts_with("0,0,"));
    assert!(d.path().join("s/manifest.json").exists());
}

#[test]
fn partial_failures_are_flagged_not_fatal() {
    let d = TempDir::new().unwrap();
    // a huge acceleration leaves a cavity of length 1 before T = 1.5
    let text = "[cavity]\nlength = 1.0\n\n[probe]\nT = 1.0\n\n[sweep]\ncurve_a = [0.0, 1e6]\ncurve_T_steps = 4\n";
    let cfg = write(d.path(), "c.toml", text);
    let o = relctl(&["sweep", "--config", &cfg, "--out", "s"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("flagged rows"));
    let csv = fs::read_to_string(d.path().join("s/sweep.csv")).unwrap();
    assert!(csv.contains("failed:config"));
}

#[test]
fn dump_amplitudes_writes_both_tables() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.toml", "[cavity]\nmodes = 2\n");
    let o = relctl(&["dump-amplitudes", "--config", &cfg, "--out", "d"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let amps = fs::read_to_string(d.path().join("d/amplitudes.csv")).unwrap();
    assert_eq!(amps.lines().count(), 1 + 2 * 40);
    let terms = fs::read_to_string(d.path().join("d/terms.csv")).unwrap();
    assert!(terms.lines().next().unwrap().starts_with("mode,family"));
}

#[test]
fn oracle_check_reports_third_order_residual() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.toml", "[probe]\nT = 1.0\n\n[field]\nalpha_re = 0.5\n");
    let o = relctl(
        &["oracle-check", "--config", &cfg, "--out", "o", "--lambdas", "0.02,0.01", "--n-max", "8"],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("(consistent for third order)"), "{}", stdout(&o));
    let csv = fs::read_to_string(d.path().join("o/oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
