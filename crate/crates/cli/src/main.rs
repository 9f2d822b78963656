//! `relctl`: run the perturbative pipeline, sweeps and checks from a TOML
//! config.
//!
//! Exit status is 0 on success, 1 for invalid input or I/O failures and 2
//! when a numerical procedure does not converge.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use relctl::amplitudes::AmplitudeTable;
use relctl::dyson::{write_terms_csv, ReducedDynamics};
use relctl::kinematics::si_acceleration;
use relctl::observables::{angle_change, bloch};
use relctl::oracle::{residual_scaling, TruncatedSpace};
use relctl::output::{fmt_f64, fmt_opt, write_table};
use relctl::sweep::{curve_sweep, maximize, with_threads, write_records, Perturbative, SweepRecord};
use relctl::{SimulationConfig, ValidatedConfig, C64};

use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "relctl", version, about = "Remote qubit rotation by an accelerated probe atom")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for datasets and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Reserved; the pipeline is deterministic.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Probe proper acceleration (overrides probe.a).
    #[arg(long, global = true, allow_negative_numbers = true)]
    a: Option<f64>,
    /// Flight time in cavity-frame units (overrides probe.T).
    #[arg(long = "T", global = true, value_name = "T", allow_negative_numbers = true)]
    t: Option<f64>,
    /// Physical gap in rad/s, for convert-units.
    #[arg(long, global = true, allow_negative_numbers = true)]
    omega: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the target state after one flight, with diagnostics.
    Simulate,
    /// Rotation and purity against T for each acceleration in sweep.curve_a.
    Sweep,
    /// Best (a, T) for every target state on the sweep grid.
    Maximize,
    /// Compare with exact truncated-space evolution at three couplings.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.01, 0.005])]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        modes: usize,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
    },
    /// Dimensionless acceleration to m/s² and multiples of g.
    ConvertUnits,
    /// Write the amplitude table and the per-term breakdown.
    DumpAmplitudes,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Maximize => "maximize",
            Command::OracleCheck { .. } => "oracle-check",
            Command::ConvertUnits => "convert-units",
            Command::DumpAmplitudes => "dump-amplitudes",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Core(relctl::Error),
    Io(PathBuf, std::io::Error),
    Usage(String),
}

impl From<relctl::Error> for Failure {
    fn from(e: relctl::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::Usage(m) => write!(f, "{m}"),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<SimulationConfig, Failure> {
    let mut c = match &cli.config {
        Some(p) => SimulationConfig::load(p)?,
        None => SimulationConfig::default(),
    };
    if let Some(a) = cli.a {
        c.probe.a = a;
    }
    if let Some(t) = cli.t {
        c.probe.flight_time = Some(t);
    }
    Ok(c)
}

fn out_dir(cli: &Cli) -> std::result::Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(dir.clone(), e))?;
    Ok(dir)
}

fn run(cli: &Cli) -> Outcome {
    let start = Instant::now();
    if let Command::ConvertUnits = cli.command {
        return convert_units(cli);
    }
    let config = load_config(cli)?;
    let vc = config.validate()?;
    let mut m = RunManifest::new(cli.command.name(), config.hash());
    m.config_path = cli.config.clone();
    m.threads = cli.threads;
    m.seed = cli.seed;
    let dir = match cli.command {
        Command::Simulate => {
            simulate(&vc)?;
            match &cli.out {
                Some(_) => out_dir(cli)?,
                None => return Ok(()),
            }
        }
        _ => out_dir(cli)?,
    };
    match &cli.command {
        Command::Simulate => simulate_dataset(&vc, &dir, &mut m)?,
        Command::Sweep => sweep(cli, &vc, &dir, &mut m)?,
        Command::Maximize => best(cli, &vc, &dir, &mut m)?,
        Command::OracleCheck { lambdas, modes, n_max } => oracle_check(&vc, lambdas, *modes, *n_max, &dir, &mut m)?,
        Command::DumpAmplitudes => dump(&vc, &dir, &mut m)?,
        Command::ConvertUnits => unreachable!(),
    }
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&dir).map_err(|e| Failure::Io(dir.join("manifest.json"), e))?;
    if m.warnings > 0 {
        eprintln!("warning: {} flagged rows", m.warnings);
    }
    Ok(())
}

fn fmt_c(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{} {sign} {}i", fmt_f64(z.re), fmt_f64(z.im.abs()))
}

fn fmt_matrix(out: &mut String, name: &str, m: &nalgebra::Matrix2<C64>) {
    let _ = writeln!(out, "{name}");
    for i in 0..2 {
        let _ = writeln!(out, "  [{}, {}]", fmt_c(m[(i, 0)]), fmt_c(m[(i, 1)]));
    }
}

fn simulate(vc: &ValidatedConfig) -> Outcome {
    let dynamics = ReducedDynamics::build(vc)?;
    let r = dynamics.apply(&vc.target_state());
    let b = bloch(&r.state);
    let ch = angle_change(&r.initial, &r.state);
    let d = r.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "a = {}, T = {}", fmt_f64(vc.config().probe.a), fmt_f64(vc.flight_time));
    fmt_matrix(&mut s, "initial state", r.initial.matrix());
    fmt_matrix(&mut s, "final state", r.state.matrix());
    let _ = writeln!(
        s,
        "bloch r = [{}, {}, {}], |r| = {}",
        fmt_f64(b.r[0]),
        fmt_f64(b.r[1]),
        fmt_f64(b.r[2]),
        fmt_f64(b.norm)
    );
    let _ = writeln!(s, "theta = {}, phi = {}", fmt_opt(b.theta), fmt_opt(b.phi));
    let _ = writeln!(s, "d_theta = {}, d_phi = {}", fmt_opt(ch.d_theta), fmt_opt(ch.d_phi));
    let _ = writeln!(s, "purity = {}, min eigenvalue = {}", fmt_f64(b.purity), fmt_f64(b.min_eigenvalue));
    let _ = writeln!(s, "diagnostics");
    for (k, v) in [
        ("trace_first", d.trace_first),
        ("trace_second", d.trace_second),
        ("hermiticity_defect", d.hermiticity_defect),
        ("modes", d.modes as f64),
        ("mode_delta", d.mode_delta),
        ("quadrature_change", d.quadrature_change),
        ("first_order_mismatch", d.first_order_mismatch),
        ("probe_first_order", d.probe_first_order),
    ] {
        let _ = writeln!(s, "  {k} = {}", fmt_f64(v));
    }
    if d.mode_limited {
        let _ = writeln!(s, "  mode sum stopped at max_modes without a convergence check");
    }
    if d.negativity_exceeded {
        let _ = writeln!(s, "  warning: negative eigenvalue beyond -10 lambda^3");
    }
    print!("{s}");
    Ok(())
}

fn tolerances(vc: &ValidatedConfig) -> std::result::Result<BTreeMap<String, f64>, Failure> {
    let n = &vc.config().numerics;
    let d = ReducedDynamics::build(vc)?;
    Ok(BTreeMap::from([
        ("quad_rel_tol".to_string(), n.quad_rel_tol),
        ("quad_abs_tol".to_string(), n.quad_abs_tol),
        ("mode_tol".to_string(), n.mode_tol),
        ("achieved_quadrature_change".to_string(), d.quadrature_change),
        ("achieved_mode_delta".to_string(), d.mode_delta),
        ("achieved_modes".to_string(), d.modes as f64),
    ]))
}

fn emit(m: &mut RunManifest, dir: &Path, name: &str, bytes: &[u8]) -> Outcome {
    m.emit(dir, name, bytes).map_err(|e| Failure::Io(dir.join(name), e))
}

fn simulate_dataset(vc: &ValidatedConfig, dir: &Path, m: &mut RunManifest) -> Outcome {
    let r = ReducedDynamics::build(vc)?.apply(&vc.target_state());
    let (b, ch) = (bloch(&r.state), angle_change(&r.initial, &r.state));
    let row = vec![
        fmt_f64(vc.config().probe.a),
        fmt_f64(vc.flight_time),
        fmt_f64(b.r[0]),
        fmt_f64(b.r[1]),
        fmt_f64(b.r[2]),
        fmt_opt(ch.d_theta),
        fmt_opt(ch.d_phi),
        fmt_f64(b.purity),
        fmt_f64(b.min_eigenvalue),
    ];
    let mut buf = Vec::new();
    write_table(
        &mut buf,
        &["a", "T", "r_x", "r_y", "r_z", "d_theta", "d_phi", "purity", "min_eigenvalue"],
        &[row],
    )?;
    m.tolerances = tolerances(vc)?;
    emit(m, dir, "simulate.csv", &buf)
}

fn records_bytes(recs: &[SweepRecord]) -> std::result::Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_records(recs, &mut buf)?;
    Ok(buf)
}

fn sweep(cli: &Cli, vc: &ValidatedConfig, dir: &Path, m: &mut RunManifest) -> Outcome {
    let spec = &vc.config().sweep;
    spec.check()?;
    let model = Perturbative { base: vc.clone() };
    let (theta, phi) = (vc.config().target.theta, vc.config().target.phi);
    let recs = with_threads(cli.threads, || {
        curve_sweep(&model, &spec.curve_a, &spec.curve_t_grid(), theta, phi)
    })?;
    m.warnings = recs.iter().filter(|r| r.is_failed()).count();
    m.tolerances = tolerances(vc)?;
    emit(m, dir, "sweep.csv", &records_bytes(&recs)?)
}

fn best(cli: &Cli, vc: &ValidatedConfig, dir: &Path, m: &mut RunManifest) -> Outcome {
    let spec = &vc.config().sweep;
    spec.check()?;
    let model = Perturbative { base: vc.clone() };
    let recs = with_threads(cli.threads, || maximize(&model, spec))??;
    m.warnings = recs.iter().filter(|r| r.argmax_a.is_none()).count();
    m.tolerances = tolerances(vc)?;
    emit(m, dir, "maximize.csv", &records_bytes(&recs)?)
}

fn oracle_check(
    vc: &ValidatedConfig,
    lambdas: &[f64],
    modes: usize,
    n_max: usize,
    dir: &Path,
    m: &mut RunManifest,
) -> Outcome {
    let space = TruncatedSpace::new(modes, n_max)?;
    let rep = residual_scaling(vc, &space, lambdas)?;
    let rows: Vec<Vec<String>> = rep
        .points
        .iter()
        .map(|p| {
            let (e, q) = (bloch(&p.exact), bloch(&p.perturbative));
            vec![
                fmt_f64(p.lambda),
                fmt_f64(p.distance),
                fmt_f64(e.r[0]),
                fmt_f64(e.r[1]),
                fmt_f64(e.r[2]),
                fmt_f64(q.r[0]),
                fmt_f64(q.r[1]),
                fmt_f64(q.r[2]),
                p.steps.to_string(),
                fmt_f64(p.step_change),
                fmt_f64(p.truncation_change),
            ]
        })
        .collect();
    let mut buf = Vec::new();
    write_table(
        &mut buf,
        &[
            "lambda",
            "trace_distance",
            "exact_r_x",
            "exact_r_y",
            "exact_r_z",
            "pert_r_x",
            "pert_r_y",
            "pert_r_z",
            "steps",
            "step_change",
            "truncation_change",
        ],
        &rows,
    )?;
    let worst = |f: fn(&relctl::oracle::ScalingPoint) -> f64| rep.points.iter().map(f).fold(0.0, f64::max);
    m.tolerances = BTreeMap::from([
        ("exponent".to_string(), rep.exponent),
        ("max_step_change".to_string(), worst(|p| p.step_change)),
        ("max_truncation_change".to_string(), worst(|p| p.truncation_change)),
    ]);
    let ok = rep.within(2.7, 3.3);
    println!(
        "residual exponent {} ({} for third order)",
        fmt_f64(rep.exponent),
        if ok { "consistent" } else { "inconsistent" }
    );
    if !ok {
        m.warnings += 1;
    }
    emit(m, dir, "oracle.csv", &buf)
}

fn dump(vc: &ValidatedConfig, dir: &Path, m: &mut RunManifest) -> Outcome {
    let table = AmplitudeTable::build(vc, vc.config().cavity.modes)?;
    let mut amps = Vec::new();
    table.write_csv(&mut amps)?;
    emit(m, dir, "amplitudes.csv", &amps)?;
    let mut terms = Vec::new();
    write_terms_csv(vc, &table, &mut terms)?;
    m.tolerances = BTreeMap::from([("achieved_quadrature_change".to_string(), table.max_change)]);
    emit(m, dir, "terms.csv", &terms)
}

fn convert_units(cli: &Cli) -> Outcome {
    let omega = cli
        .omega
        .ok_or_else(|| Failure::Usage("convert-units needs --omega (gap in rad/s)".into()))?;
    let a = match cli.a {
        Some(a) => a,
        None => load_config(cli)?.probe.a,
    };
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Failure::Usage(format!("--omega must be positive, got {omega}")));
    }
    if !(a.is_finite() && a >= 0.0) {
        return Err(Failure::Usage(format!("--a must be non-negative, got {a}")));
    }
    let si = si_acceleration(a, omega);
    println!(
        "a = {}, omega = {} rad/s: {} m/s^2 = {} g",
        fmt_f64(a),
        fmt_f64(omega),
        fmt_f64(si.meters_per_second_squared),
        fmt_f64(si.multiples_of_g)
    );
    Ok(())
}
