//! Parameter sweeps over the probe trajectory `(a, T)` and the target's
//! initial Bloch angles, and grid maximisation of the induced rotation.
//!
//! Work is split into a per-trajectory preparation (the amplitude table and
//! the reduced dynamics, independent of the target state) and a cheap
//! per-target-state observation. [`GridModel`] abstracts the two so tests can
//! inject synthetic objectives.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyson::ReducedDynamics;
use crate::error::{Error, Result};
use crate::model::{QubitDensity, ValidatedConfig};
use crate::observables::{angle_change, purity};
use crate::output::{csv_writer, fmt_f64, fmt_opt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Dphi,
    Dtheta,
}

fn default_a_max() -> f64 {
    2.3
}
fn default_a_steps() -> usize {
    47
}
fn default_t_max() -> f64 {
    1.5
}
fn default_t_steps() -> usize {
    31
}
fn default_angle_steps() -> usize {
    24
}
fn default_curve_a() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0]
}
fn default_rounds() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub a_min: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
    #[serde(default = "default_a_steps")]
    pub a_steps: usize,
    #[serde(default, rename = "T_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max", rename = "T_max")]
    pub t_max: f64,
    #[serde(default = "default_t_steps", rename = "T_steps")]
    pub t_steps: usize,
    #[serde(default = "default_angle_steps")]
    pub theta_steps: usize,
    #[serde(default = "default_angle_steps")]
    pub phi_steps: usize,
    #[serde(default)]
    pub objective: Objective,
    /// Accelerations for the curve sweep (rotation against `T`).
    #[serde(default = "default_curve_a")]
    pub curve_a: Vec<f64>,
    #[serde(default = "default_t_steps", rename = "curve_T_steps")]
    pub curve_t_steps: usize,
    /// Local refinement rounds after the exhaustive search.
    #[serde(default = "default_rounds")]
    pub refine_rounds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            a_min: 0.0,
            a_max: default_a_max(),
            a_steps: default_a_steps(),
            t_min: 0.0,
            t_max: default_t_max(),
            t_steps: default_t_steps(),
            theta_steps: default_angle_steps(),
            phi_steps: default_angle_steps(),
            objective: Objective::Dphi,
            curve_a: default_curve_a(),
            curve_t_steps: default_t_steps(),
            refine_rounds: default_rounds(),
        }
    }
}

fn axis(key: &str, min: f64, max: f64, steps: usize) -> Result<()> {
    if !(min.is_finite() && max.is_finite() && min >= 0.0) {
        return Err(Error::config(key, format!("range must be finite and non-negative, got [{min}, {max}]")));
    }
    if max < min {
        return Err(Error::config(key, format!("empty range [{min}, {max}]")));
    }
    if steps == 0 || (max > min && steps < 2) {
        return Err(Error::config(key, "a swept axis needs at least 2 steps"));
    }
    Ok(())
}

impl SweepSpec {
    pub fn check(&self) -> Result<()> {
        axis("sweep.a", self.a_min, self.a_max, self.a_steps)?;
        axis("sweep.T", self.t_min, self.t_max, self.t_steps)?;
        if self.theta_steps == 0 {
            return Err(Error::config("sweep.theta_steps", "must be at least 1"));
        }
        if self.phi_steps == 0 {
            return Err(Error::config("sweep.phi_steps", "must be at least 1"));
        }
        if self.curve_t_steps < 2 {
            return Err(Error::config("sweep.curve_T_steps", "must be at least 2"));
        }
        if self.curve_a.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::config("sweep.curve_a", "accelerations must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn a_grid(&self) -> Vec<f64> {
        linspace(self.a_min, self.a_max, self.a_steps)
    }

    pub fn t_grid(&self) -> Vec<f64> {
        linspace(self.t_min, self.t_max, self.t_steps)
    }

    pub fn curve_t_grid(&self) -> Vec<f64> {
        linspace(self.t_min, self.t_max, self.curve_t_steps)
    }

    /// `θ` from pole to pole inclusive.
    pub fn theta_grid(&self) -> Vec<f64> {
        linspace(0.0, PI, self.theta_steps)
    }

    /// `φ_k = 2πk/n`.
    pub fn phi_grid(&self) -> Vec<f64> {
        (0..self.phi_steps)
            .map(|k| 2.0 * PI * k as f64 / self.phi_steps as f64)
            .collect()
    }
}

/// `n` evenly spaced points; a single point is `min`.
pub fn linspace(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![min],
        _ => {
            let span = max - min;
            (0..n)
                .map(|i| if i == n - 1 { max } else { min + span * i as f64 / (n - 1) as f64 })
                .collect()
        }
    }
}

/// What is measured at one `(a, T, θ, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub d_theta: Option<f64>,
    pub d_phi: Option<f64>,
    pub purity: f64,
    pub flags: Vec<String>,
}

impl Observation {
    pub fn objective(&self, o: Objective) -> Option<f64> {
        match o {
            Objective::Dphi => self.d_phi,
            Objective::Dtheta => self.d_theta,
        }
    }
}

/// Two-stage evaluation seam: expensive per-trajectory preparation, cheap
/// per-target-state observation.
pub trait GridModel: Sync {
    type Prepared: Send + Sync;

    fn prepare(&self, a: f64, t: f64) -> Result<Self::Prepared>;

    fn observe(&self, prepared: &Self::Prepared, theta: f64, phi: f64) -> Result<Observation>;
}

/// The perturbative pipeline.
pub struct Perturbative {
    pub base: ValidatedConfig,
}

impl GridModel for Perturbative {
    type Prepared = ReducedDynamics;

    fn prepare(&self, a: f64, t: f64) -> Result<ReducedDynamics> {
        ReducedDynamics::build(&self.base.with_trajectory(a, t)?)
    }

    fn observe(&self, dynamics: &ReducedDynamics, theta: f64, phi: f64) -> Result<Observation> {
        let initial = QubitDensity::from_bloch_angles(theta, phi);
        let r = dynamics.apply(&initial);
        let change = angle_change(&initial, &r.state);
        let mut flags = Vec::new();
        if change.d_phi.is_none() {
            flags.push("undefined_phi".to_string());
        }
        if change.d_theta.is_none() {
            flags.push("undefined_theta".to_string());
        }
        if r.diagnostics.mode_limited {
            flags.push("mode_limited".to_string());
        }
        if r.diagnostics.negativity_exceeded {
            flags.push("negative_eigenvalue".to_string());
        }
        Ok(Observation {
            d_theta: change.d_theta,
            d_phi: change.d_phi,
            purity: purity(&r.state),
            flags,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    /// Grid point; for maximisation, the best coarse point.
    pub a: Option<f64>,
    pub t: Option<f64>,
    pub theta0: f64,
    pub phi0: f64,
    pub d_theta: Option<f64>,
    pub d_phi: Option<f64>,
    pub purity: Option<f64>,
    pub argmax_a: Option<f64>,
    pub argmax_t: Option<f64>,
    pub flags: Vec<String>,
}

pub const CSV_HEADER: [&str; 10] = [
    "a", "T", "theta0", "phi0", "d_theta", "d_phi", "purity", "argmax_a", "argmax_T", "flags",
];

impl SweepRecord {
    fn failed(a: f64, t: f64, theta0: f64, phi0: f64, e: &Error) -> Self {
        SweepRecord {
            a: Some(a),
            t: Some(t),
            theta0,
            phi0,
            d_theta: None,
            d_phi: None,
            purity: None,
            argmax_a: None,
            argmax_t: None,
            flags: vec![failure_flag(e)],
        }
    }

    pub fn is_failed(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("failed:"))
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            fmt_opt(self.a),
            fmt_opt(self.t),
            fmt_f64(self.theta0),
            fmt_f64(self.phi0),
            fmt_opt(self.d_theta),
            fmt_opt(self.d_phi),
            fmt_opt(self.purity),
            fmt_opt(self.argmax_a),
            fmt_opt(self.argmax_t),
            self.flags.join(";"),
        ]
    }
}

fn failure_flag(e: &Error) -> String {
    let kind = match e {
        Error::InvalidConfig { .. } => "config",
        Error::Quadrature { .. } => "quadrature",
        Error::ModeConvergence { .. } => "modes",
        _ => "other",
    };
    format!("failed:{kind}")
}

pub fn write_records<W: Write>(records: &[SweepRecord], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record(r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Rotation against `T` for each `a`, at a fixed target state. Rows are in
/// `(a, T)` order; failed points become flagged rows.
pub fn curve_sweep<M: GridModel>(model: &M, a_list: &[f64], t_grid: &[f64], theta: f64, phi: f64) -> Vec<SweepRecord> {
    let points: Vec<(f64, f64)> = a_list
        .iter()
        .flat_map(|&a| t_grid.iter().map(move |&t| (a, t)))
        .collect();
    points
        .par_iter()
        .map(|&(a, t)| {
            let obs = model.prepare(a, t).and_then(|p| model.observe(&p, theta, phi));
            match obs {
                Ok(o) => SweepRecord {
                    a: Some(a),
                    t: Some(t),
                    theta0: theta,
                    phi0: phi,
                    d_theta: o.d_theta,
                    d_phi: o.d_phi,
                    purity: Some(o.purity),
                    argmax_a: None,
                    argmax_t: None,
                    flags: o.flags,
                },
                Err(e) => SweepRecord::failed(a, t, theta, phi, &e),
            }
        })
        .collect()
}

type Shared<P> = Arc<Result<P>>;
type Slots<P> = Mutex<HashMap<(u64, u64), Shared<P>>>;

/// Prepared states keyed by exact `(a, T)` bits, shared across target
/// states.
struct Cache<'m, M: GridModel> {
    model: &'m M,
    map: Slots<M::Prepared>,
}

impl<'m, M: GridModel> Cache<'m, M> {
    fn get(&self, a: f64, t: f64) -> Shared<M::Prepared> {
        let key = (a.to_bits(), t.to_bits());
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let fresh = Arc::new(self.model.prepare(a, t));
        self.map
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(fresh)
            .clone()
    }
}

/// Candidate optimum. Order: larger `|value|`, then smaller `a`, then
/// smaller `T`.
#[derive(Debug, Clone)]
struct Candidate {
    a: f64,
    t: f64,
    value: f64,
    obs: Observation,
}

fn better(c: &Candidate, incumbent: &Option<Candidate>) -> bool {
    match incumbent {
        None => true,
        Some(i) => {
            let (x, y) = (c.value.abs(), i.value.abs());
            x > y || (x == y && (c.a < i.a || (c.a == i.a && c.t < i.t)))
        }
    }
}

/// Per target state, the `(a, T)` maximising the magnitude of the
/// objective: exhaustive search over the grid, then `refine_rounds` rounds
/// over the 8 neighbours at successively halved steps, clamped to the
/// ranges. Records are ordered by `(θ, φ)`.
pub fn maximize<M: GridModel>(model: &M, spec: &SweepSpec) -> Result<Vec<SweepRecord>> {
    spec.check()?;
    let (a_grid, t_grid) = (spec.a_grid(), spec.t_grid());
    let cache = Cache {
        model,
        map: Mutex::new(HashMap::new()),
    };
    let coarse: Vec<(f64, f64)> = a_grid
        .iter()
        .flat_map(|&a| t_grid.iter().map(move |&t| (a, t)))
        .collect();
    let prepared: Vec<Shared<M::Prepared>> = coarse.par_iter().map(|&(a, t)| cache.get(a, t)).collect();
    if prepared.iter().all(|p| p.is_err()) {
        let e = prepared[0].as_ref().as_ref().err().map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Sweep(format!("every grid point failed; first error: {e}")));
    }

    let da = step(&a_grid);
    let dt = step(&t_grid);
    let targets: Vec<(f64, f64)> = spec
        .theta_grid()
        .iter()
        .flat_map(|&th| spec.phi_grid().into_iter().map(move |ph| (th, ph)))
        .collect();

    let records = targets
        .par_iter()
        .map(|&(theta, phi)| {
            let eval = |a: f64, t: f64, p: &Result<M::Prepared>| -> Option<Candidate> {
                let obs = model.observe(p.as_ref().ok()?, theta, phi).ok()?;
                let value = obs.objective(spec.objective)?;
                value.is_finite().then_some(Candidate { a, t, value, obs })
            };
            let mut best: Option<Candidate> = None;
            for (&(a, t), p) in coarse.iter().zip(&prepared) {
                if let Some(c) = eval(a, t, p) {
                    if better(&c, &best) {
                        best = Some(c);
                    }
                }
            }
            let Some(coarse_best) = best.clone() else {
                let o = prepared.iter().find_map(|p| p.as_ref().as_ref().ok()).and_then(|p| model.observe(p, theta, phi).ok());
                let mut flags = o.map(|o| o.flags).unwrap_or_default();
                flags.push("no_objective".into());
                return SweepRecord {
                    a: None,
                    t: None,
                    theta0: theta,
                    phi0: phi,
                    d_theta: None,
                    d_phi: None,
                    purity: None,
                    argmax_a: None,
                    argmax_t: None,
                    flags,
                };
            };
            let (mut ha, mut ht) = (da, dt);
            for _ in 0..spec.refine_rounds {
                ha *= 0.5;
                ht *= 0.5;
                let centre = best.clone().expect("incumbent");
                for (sa, st) in NEIGHBOURS {
                    let a = (centre.a + sa * ha).clamp(spec.a_min, spec.a_max);
                    let t = (centre.t + st * ht).clamp(spec.t_min, spec.t_max);
                    if a == centre.a && t == centre.t {
                        continue;
                    }
                    let p = cache.get(a, t);
                    if let Some(c) = eval(a, t, &p) {
                        if better(&c, &best) {
                            best = Some(c);
                        }
                    }
                }
            }
            let best = best.expect("incumbent");
            let mut flags = best.obs.flags.clone();
            if best.a != coarse_best.a || best.t != coarse_best.t {
                flags.push("refined".into());
            }
            SweepRecord {
                a: Some(coarse_best.a),
                t: Some(coarse_best.t),
                theta0: theta,
                phi0: phi,
                d_theta: best.obs.d_theta,
                d_phi: best.obs.d_phi,
                purity: Some(best.obs.purity),
                argmax_a: Some(best.a),
                argmax_t: Some(best.t),
                flags,
            }
        })
        .collect();
    Ok(records)
}

const NEIGHBOURS: [(f64, f64); 8] = [
    (-1.0, -1.0),
    (-1.0, 0.0),
    (-1.0, 1.0),
    (0.0, -1.0),
    (0.0, 1.0),
    (1.0, -1.0),
    (1.0, 0.0),
    (1.0, 1.0),
];

fn step(grid: &[f64]) -> f64 {
    if grid.len() < 2 {
        0.0
    } else {
        grid[1] - grid[0]
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (`None`: rayon's
/// default).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Sweep(e.to_string()))?;
    Ok(pool.install(f))
}
