//! Configuration schema, validation and the two-level state types.
//!
//! Basis convention used throughout the crate: index 0 is the excited state
//! `|e⟩`, index 1 the ground state `|g⟩`, and `σ⁺ = |e⟩⟨g|`. The Bloch north
//! pole is `|e⟩`.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinematics;
use crate::sweep::SweepSpec;

/// Index of the mode prepared in the coherent state.
pub const COHERENT_MODE: usize = 1;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    /// The accelerated probe.
    A,
    /// The stationary target.
    B,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::A, Detector::B];

    pub fn symbol(self) -> &'static str {
        match self {
            Detector::A => "A",
            Detector::B => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    /// Cavity length; defaults to `π / Ω_B` so the first mode is resonant
    /// with the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

impl Default for CavityConfig {
    fn default() -> Self {
        CavityConfig {
            length: None,
            modes: default_modes(),
        }
    }
}

fn default_modes() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Proper acceleration.
    #[serde(default = "one")]
    pub a: f64,
    /// Cavity-frame flight time. Optional only with `full_crossing`.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub flight_time: Option<f64>,
    #[serde(default = "one")]
    pub gap: f64,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default)]
    pub p_re: f64,
    #[serde(default = "default_p_im")]
    pub p_im: f64,
    /// Interaction window is the full crossing: `T` defaults to the crossing
    /// time and must not exceed it.
    #[serde(default)]
    pub full_crossing: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            a: 1.0,
            flight_time: Some(1.0),
            gap: 1.0,
            coupling: default_coupling(),
            p_re: 0.0,
            p_im: default_p_im(),
            full_crossing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Position; defaults to the cavity centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default = "one")]
    pub gap: f64,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    /// Initial Bloch polar angle (from `|e⟩`).
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            x: None,
            gap: 1.0,
            coupling: default_coupling(),
            theta: default_theta(),
            phi: default_phi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default = "one")]
    pub alpha_re: f64,
    #[serde(default)]
    pub alpha_im: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            alpha_re: 1.0,
            alpha_im: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    #[serde(default = "default_rel_tol")]
    pub quad_rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub quad_abs_tol: f64,
    #[serde(default = "default_panels_per_period")]
    pub panels_per_period: usize,
    #[serde(default = "default_gauss_order")]
    pub gauss_order: usize,
    /// Step-halving rounds allowed per mode before giving up.
    #[serde(default = "default_max_refinements")]
    pub max_refinements: usize,
    #[serde(default = "default_mode_tol")]
    pub mode_tol: f64,
    #[serde(default = "default_max_modes")]
    pub max_modes: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            quad_rel_tol: default_rel_tol(),
            quad_abs_tol: default_abs_tol(),
            panels_per_period: default_panels_per_period(),
            gauss_order: default_gauss_order(),
            max_refinements: default_max_refinements(),
            mode_tol: default_mode_tol(),
            max_modes: default_max_modes(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_coupling() -> f64 {
    0.01
}
fn default_p_im() -> f64 {
    1.0 / PI
}
fn default_theta() -> f64 {
    PI / 3.0
}
fn default_phi() -> f64 {
    PI / 4.0
}
fn default_rel_tol() -> f64 {
    1e-10
}
fn default_abs_tol() -> f64 {
    1e-13
}
fn default_panels_per_period() -> usize {
    8
}
fn default_gauss_order() -> usize {
    10
}
fn default_max_refinements() -> usize {
    8
}
fn default_mode_tol() -> f64 {
    1e-6
}
fn default_max_modes() -> usize {
    160
}

/// One run: cavity, both detectors, field and numerics, plus the sweep grid
/// used by the `sweep` and `maximize` commands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub cavity: CavityConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Short content hash of the canonical serialisation.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn alpha(&self) -> C64 {
        C64::new(self.field.alpha_re, self.field.alpha_im)
    }

    pub fn validate(&self) -> Result<ValidatedConfig> {
        ValidatedConfig::new(self.clone())
    }
}

/// How a detector moves through the cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Starts at rest at `x = 0` with constant proper acceleration.
    Accelerated { a: f64 },
    Stationary { x: f64 },
}

/// Validated per-detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub detector: Detector,
    pub gap: f64,
    pub coupling: f64,
    pub motion: Motion,
}

impl DetectorParams {
    pub fn proper_time(&self, t: f64) -> f64 {
        match self.motion {
            Motion::Accelerated { a } => kinematics::proper_time(a, t),
            Motion::Stationary { .. } => t,
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        match self.motion {
            Motion::Accelerated { a } => kinematics::position(a, t),
            Motion::Stationary { x } => x,
        }
    }

    /// Switching function in cavity time on the interaction window. The
    /// probe's redshift factor dτ/dt is absorbed here.
    pub fn switching(&self, t: f64) -> f64 {
        match self.motion {
            Motion::Accelerated { a } => kinematics::redshift(a, t),
            Motion::Stationary { .. } => 1.0,
        }
    }
}

/// A config whose invariants hold, with derived quantities filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    config: SimulationConfig,
    pub length: f64,
    pub target_x: f64,
    pub flight_time: f64,
    /// Probe position at the end of the window.
    pub probe_exit: f64,
    /// Cavity time at which the probe reaches the far wall.
    pub crossing_time: f64,
    /// ω_n = nπ/L for n = 1..=max(modes, max_modes).
    pub omegas: Vec<f64>,
}

impl ValidatedConfig {
    fn new(config: SimulationConfig) -> Result<Self> {
        let c = &config;
        positive("target.gap", c.target.gap)?;
        positive("probe.gap", c.probe.gap)?;
        let length = match c.cavity.length {
            Some(l) => {
                if !(l.is_finite() && l > 0.0) {
                    return Err(Error::config("cavity.length", format!("length must be positive, got {l}")));
                }
                l
            }
            None => PI / c.target.gap,
        };
        if c.cavity.modes < 1 {
            return Err(Error::config("cavity.modes", "need at least one mode"));
        }
        non_negative("probe.a", c.probe.a)?;
        non_negative("probe.coupling", c.probe.coupling)?;
        non_negative("target.coupling", c.target.coupling)?;
        for (key, v) in [
            ("probe.p_re", c.probe.p_re),
            ("probe.p_im", c.probe.p_im),
            ("target.theta", c.target.theta),
            ("target.phi", c.target.phi),
            ("field.alpha_re", c.field.alpha_re),
            ("field.alpha_im", c.field.alpha_im),
        ] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        ProbePrep::new(C64::new(c.probe.p_re, c.probe.p_im))
            .ket()
            .map_err(|m| Error::config("probe.p_re", m))?;

        let target_x = c.target.x.unwrap_or(0.5 * length);
        if !(target_x > 0.0 && target_x < length) {
            return Err(Error::config(
                "target.x",
                format!("target must sit strictly inside the cavity (0, {length}), got {target_x}"),
            ));
        }

        let a = c.probe.a;
        let crossing_time = kinematics::crossing_time(a, length);
        let flight_time = match (c.probe.flight_time, c.probe.full_crossing) {
            (Some(t), _) => t,
            (None, true) => crossing_time,
            (None, false) => {
                return Err(Error::config("probe.T", "flight time required unless full_crossing is set"))
            }
        };
        if !(flight_time.is_finite() && flight_time >= 0.0) {
            return Err(Error::config("probe.T", format!("flight time must be finite and non-negative, got {flight_time}")));
        }
        let probe_exit = kinematics::position(a, flight_time);
        if probe_exit > length * (1.0 + 1e-12) {
            return Err(Error::config(
                "probe.T",
                format!(
                    "probe leaves the cavity at t = {crossing_time} before the end of the window T = {flight_time} (x(T) = {probe_exit} > L = {length})"
                ),
            ));
        }

        let n = &c.numerics;
        for (key, v) in [
            ("numerics.quad_rel_tol", n.quad_rel_tol),
            ("numerics.quad_abs_tol", n.quad_abs_tol),
            ("numerics.mode_tol", n.mode_tol),
        ] {
            positive(key, v)?;
        }
        if n.panels_per_period < 4 {
            return Err(Error::config("numerics.panels_per_period", "must be at least 4"));
        }
        if n.gauss_order < 2 {
            return Err(Error::config("numerics.gauss_order", "must be at least 2"));
        }
        if n.max_modes < c.cavity.modes {
            return Err(Error::config("numerics.max_modes", "must be at least cavity.modes"));
        }
        c.sweep.check()?;

        let count = n.max_modes.max(c.cavity.modes);
        let omegas = (1..=count).map(|j| j as f64 * PI / length).collect();
        Ok(ValidatedConfig {
            length,
            target_x,
            flight_time,
            probe_exit,
            crossing_time,
            omegas,
            config,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn omega(&self, mode: usize) -> f64 {
        mode as f64 * PI / self.length
    }

    pub fn alpha(&self) -> C64 {
        self.config.alpha()
    }

    pub fn detector(&self, d: Detector) -> DetectorParams {
        let c = &self.config;
        match d {
            Detector::A => DetectorParams {
                detector: d,
                gap: c.probe.gap,
                coupling: c.probe.coupling,
                motion: Motion::Accelerated { a: c.probe.a },
            },
            Detector::B => DetectorParams {
                detector: d,
                gap: c.target.gap,
                coupling: c.target.coupling,
                motion: Motion::Stationary { x: self.target_x },
            },
        }
    }

    pub fn coupling(&self, d: Detector) -> f64 {
        self.detector(d).coupling
    }

    pub fn probe_state(&self) -> QubitDensity {
        ProbePrep::new(C64::new(self.config.probe.p_re, self.config.probe.p_im))
            .density()
            .expect("validated")
    }

    pub fn target_state(&self) -> QubitDensity {
        QubitDensity::from_bloch_angles(self.config.target.theta, self.config.target.phi)
    }

    /// Same config with the probe trajectory replaced, revalidated.
    pub fn with_trajectory(&self, a: f64, flight_time: f64) -> Result<ValidatedConfig> {
        let mut c = self.config.clone();
        c.probe.a = a;
        c.probe.flight_time = Some(flight_time);
        c.validate()
    }

    /// Same config with both couplings replaced.
    pub fn with_couplings(&self, probe: f64, target: f64) -> Result<ValidatedConfig> {
        let mut c = self.config.clone();
        c.probe.coupling = probe;
        c.target.coupling = target;
        c.validate()
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

/// Probe preparation `p|g⟩ + sqrt(1 - p²)|e⟩`, normalised.
///
/// For complex `p` the pair `(p, q)` with `q = sqrt(1 - p²)` on the principal
/// branch is not normalised, so the ket is rescaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePrep {
    pub p: C64,
}

impl ProbePrep {
    pub fn new(p: C64) -> Self {
        ProbePrep { p }
    }

    /// Normalised ket in (|e⟩, |g⟩) order.
    pub fn ket(&self) -> std::result::Result<[C64; 2], String> {
        let q = (C64::new(1.0, 0.0) - self.p * self.p).sqrt();
        let norm = (q.norm_sqr() + self.p.norm_sqr()).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(format!("probe amplitude p = {} gives a null state", self.p));
        }
        Ok([q / norm, self.p / norm])
    }

    pub fn density(&self) -> std::result::Result<QubitDensity, String> {
        self.ket().map(QubitDensity::from_ket)
    }
}

/// 2×2 density matrix in the (|e⟩, |g⟩) basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitDensity(pub Matrix2<C64>);

impl QubitDensity {
    pub fn new(m: Matrix2<C64>) -> Self {
        QubitDensity(m)
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.0
    }

    pub fn from_ket(psi: [C64; 2]) -> Self {
        QubitDensity(Matrix2::new(
            psi[0] * psi[0].conj(),
            psi[0] * psi[1].conj(),
            psi[1] * psi[0].conj(),
            psi[1] * psi[1].conj(),
        ))
    }

    /// Pure state `cos(θ/2)|e⟩ + e^{iφ} sin(θ/2)|g⟩`.
    pub fn from_bloch_angles(theta: f64, phi: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self::from_ket([C64::new(c, 0.0), C64::from_polar(s, phi)])
    }

    /// `(I + r·σ)/2`.
    pub fn from_bloch_vector(r: [f64; 3]) -> Self {
        let [x, y, z] = r;
        QubitDensity(Matrix2::new(
            C64::new(0.5 * (1.0 + z), 0.0),
            C64::new(0.5 * x, -0.5 * y),
            C64::new(0.5 * x, 0.5 * y),
            C64::new(0.5 * (1.0 - z), 0.0),
        ))
    }

    /// Probe entries `(η, γ; γ*, β)` read off the matrix:
    /// `η = ρ_ee`, `γ = ρ_eg`, `β = ρ_gg`.
    pub fn entries(&self) -> (f64, C64, f64) {
        (self.0[(0, 0)].re, self.0[(0, 1)], self.0[(1, 1)].re)
    }

    pub fn trace(&self) -> C64 {
        self.0[(0, 0)] + self.0[(1, 1)]
    }

    /// max |ρ - ρ†| entry
    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.0;
        let off = (m[(0, 1)] - m[(1, 0)].conj()).norm();
        off.max(m[(0, 0)].im.abs()).max(m[(1, 1)].im.abs())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = &self.0;
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - rad, mean + rad]
    }

    /// Checks the invariants of a physical input state.
    pub fn check(&self) -> Result<()> {
        if self.hermiticity_defect() > HERMITIAN_TOL {
            return Err(Error::config("state", "not Hermitian"));
        }
        if (self.trace() - 1.0).norm() > TRACE_TOL {
            return Err(Error::config("state", "trace is not one"));
        }
        if self.eigenvalues()[0] < EIGEN_TOL {
            return Err(Error::config("state", "not positive semidefinite"));
        }
        Ok(())
    }

    /// `(ρ + ρ†)/2`
    pub fn hermitized(&self) -> Self {
        QubitDensity((self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }
}
