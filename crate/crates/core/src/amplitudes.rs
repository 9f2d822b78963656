//! First- and second-order time integrals of the interaction picture
//! couplings.
//!
//! For detector `d`, mode `j` and signs `s, q ∈ {+1, -1}` let
//!
//! ```text
//! h(t) = ξ_d(t) sin(k_j x_d(t)) / sqrt(ω_j L) · exp(i[s Ω_d τ_d(t) + q ω_j t])
//! ```
//!
//! on the window `[0, T]`. Then `I^{(d)}_{s,j} = ∫ h` with `q = +1`, and
//!
//! ```text
//! J^{μ,ν}_{s1,s2,j} = ∫_0^T dt1 h_{μ,+,+}(t1) ∫_0^{t1} dt2 h_{ν,s1,s2}(t2)
//! ```
//!
//! where a negated label `-A` or `-B` flips the sign of that detector's gap.
//! The sine carries the wavenumber `k_j = jπ/L` in both integrals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Detector, DetectorParams, ValidatedConfig};
use crate::output::fmt_f64;
use crate::quadrature::{self, AdaptiveOptions, CumulativeRule, PanelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn times(self, other: Sign) -> Sign {
        if self == other {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    fn index(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn parse(c: &str) -> Option<Sign> {
        match c.trim() {
            "+" => Some(Sign::Plus),
            "-" => Some(Sign::Minus),
            _ => None,
        }
    }
}

/// Detector label, possibly negated (gap sign flipped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub detector: Detector,
    pub negated: bool,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::plain(Detector::A),
        Label::neg(Detector::A),
        Label::plain(Detector::B),
        Label::neg(Detector::B),
    ];

    pub const fn plain(detector: Detector) -> Self {
        Label {
            detector,
            negated: false,
        }
    }

    pub const fn neg(detector: Detector) -> Self {
        Label {
            detector,
            negated: true,
        }
    }

    /// Label carrying sign `s`: `+d` or `-d`.
    pub fn signed(detector: Detector, s: Sign) -> Self {
        Label {
            detector,
            negated: s == Sign::Minus,
        }
    }

    pub fn sign(self) -> Sign {
        if self.negated {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    fn index(self) -> usize {
        (self.detector as usize) * 2 + self.negated as usize
    }

    pub fn parse(s: &str) -> Option<Label> {
        let s = s.trim();
        let (negated, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let detector = match rest {
            "A" => Detector::A,
            "B" => Detector::B,
            _ => return None,
        };
        Some(Label { detector, negated })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "-")?;
        }
        write!(f, "{}", self.detector.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IKey {
    pub label: Label,
    pub sign: Sign,
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JKey {
    pub first: Label,
    pub second: Detector,
    /// Sign on the second detector's gap.
    pub s1: Sign,
    /// Sign on `ω_j t2`.
    pub s2: Sign,
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AmplitudeKey {
    I(IKey),
    J(JKey),
}

impl fmt::Display for AmplitudeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmplitudeKey::I(k) => write!(f, "I[{},{}]({})", k.sign.symbol(), k.mode, k.label),
            AmplitudeKey::J(k) => write!(
                f,
                "J[{},{},{}]({},{})",
                k.s1.symbol(),
                k.s2.symbol(),
                k.mode,
                k.first,
                k.second.symbol()
            ),
        }
    }
}

/// Cavity mode profile `sin(jπx/L)/sqrt(ω_j L)` with `ω_j = jπ/L`.
pub fn mode_fn(j: usize, x: f64, length: f64) -> f64 {
    let jf = j as f64;
    (jf * PI * x / length).sin() / (jf * PI).sqrt()
}

/// Integrand of `I` for a given detector, gap sign, field sign and mode.
pub fn integrand(
    det: &DetectorParams,
    gap_sign: f64,
    field_sign: f64,
    j: usize,
    length: f64,
    t: f64,
) -> C64 {
    let omega = j as f64 * PI / length;
    let amp = det.switching(t) * mode_fn(j, det.position(t), length);
    C64::from_polar(amp, gap_sign * det.gap * det.proper_time(t) + field_sign * omega * t)
}

/// All amplitudes of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeAmplitudes {
    /// `[label][sign]`
    i: [[C64; 2]; 4],
    /// `[first label][second detector][s1][s2]`
    j: [[[[C64; 2]; 2]; 2]; 4],
}

impl ModeAmplitudes {
    pub fn i(&self, label: Label, sign: Sign) -> C64 {
        self.i[label.index()][sign.index()]
    }

    pub fn j(&self, first: Label, second: Detector, s1: Sign, s2: Sign) -> C64 {
        self.j[first.index()][second as usize][s1.index()][s2.index()]
    }

    fn max_abs(&self) -> f64 {
        self.values().map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    fn values(&self) -> impl Iterator<Item = (AmplitudeKey, C64)> + '_ {
        keys_for_mode(0).into_iter().map(move |k| (k, self.get(k)))
    }

    fn get(&self, key: AmplitudeKey) -> C64 {
        match key {
            AmplitudeKey::I(k) => self.i(k.label, k.sign),
            AmplitudeKey::J(k) => self.j(k.first, k.second, k.s1, k.s2),
        }
    }

    /// Largest entrywise difference and the key where it occurs.
    fn max_diff(&self, other: &ModeAmplitudes) -> (f64, AmplitudeKey) {
        let mut worst = (0.0, keys_for_mode(0)[0]);
        for (k, v) in self.values() {
            let d = (v - other.get(k)).norm();
            if d > worst.0 {
                worst = (d, k);
            }
        }
        worst
    }
}

/// Every key stored per mode, in sorted order: 8 `I` and 32 `J`.
pub fn keys_for_mode(mode: usize) -> Vec<AmplitudeKey> {
    let mut keys = Vec::with_capacity(40);
    for label in Label::ALL {
        for sign in Sign::BOTH {
            keys.push(AmplitudeKey::I(IKey { label, sign, mode }));
        }
    }
    for first in Label::ALL {
        for second in Detector::ALL {
            for s1 in Sign::BOTH {
                for s2 in Sign::BOTH {
                    keys.push(AmplitudeKey::J(JKey {
                        first,
                        second,
                        s1,
                        s2,
                        mode,
                    }));
                }
            }
        }
    }
    keys.sort();
    keys
}

/// Samples of `h_{d,s,q}` on a grid, indexed `[detector][s][q]`.
struct Samples {
    h: [[[Vec<C64>; 2]; 2]; 2],
}

fn sample(vc: &ValidatedConfig, j: usize, nodes: &[f64]) -> Samples {
    let length = vc.length;
    let omega = vc.omega(j);
    let mut h: [[[Vec<C64>; 2]; 2]; 2] = Default::default();
    for d in Detector::ALL {
        let det = vc.detector(d);
        let mut plus = Vec::with_capacity(nodes.len());
        let mut minus = Vec::with_capacity(nodes.len());
        for &t in nodes {
            let amp = det.switching(t) * mode_fn(j, det.position(t), length);
            let gap_phase = det.gap * det.proper_time(t);
            let field_phase = omega * t;
            plus.push(C64::from_polar(amp, gap_phase + field_phase));
            minus.push(C64::from_polar(amp, -gap_phase + field_phase));
        }
        // h_{d,s,-} = conj(h_{d,-s,+})
        let plus_conj_field: Vec<C64> = minus.iter().map(|v| v.conj()).collect();
        let minus_conj_field: Vec<C64> = plus.iter().map(|v| v.conj()).collect();
        h[d as usize] = [[plus, plus_conj_field], [minus, minus_conj_field]];
    }
    Samples { h }
}

fn evaluate_mode(vc: &ValidatedConfig, j: usize, grid: &PanelGrid) -> ModeAmplitudes {
    let nodes = grid.nodes();
    let s = sample(vc, j, &nodes);
    let weights = grid.weights();
    let mut out = ModeAmplitudes::default();

    for label in Label::ALL {
        for sign in Sign::BOTH {
            let eff = label.sign().times(sign);
            let v = grid.integrate(&s.h[label.detector as usize][eff.index()][0]);
            out.i[label.index()][sign.index()] = v;
        }
    }

    for second in Detector::ALL {
        for s1 in Sign::BOTH {
            for s2 in Sign::BOTH {
                let inner = grid.cumulative(&s.h[second as usize][s1.index()][s2.index()]);
                for first in Label::ALL {
                    let outer = &s.h[first.detector as usize][first.sign().index()][0];
                    let mut acc = C64::new(0.0, 0.0);
                    for ((o, g), w) in outer.iter().zip(&inner).zip(&weights) {
                        acc += o * g * w;
                    }
                    out.j[first.index()][second as usize][s1.index()][s2.index()] = acc;
                }
            }
        }
    }
    out
}

/// Panels so that each spans at most `1/panels_per_period` of the shortest
/// local oscillation period.
fn initial_panels(vc: &ValidatedConfig, j: usize) -> usize {
    let c = vc.config();
    let fastest = c.probe.gap.max(c.target.gap) + vc.omega(j);
    let period = 2.0 * PI / fastest;
    let h = period / c.numerics.panels_per_period as f64;
    ((vc.flight_time / h).ceil() as usize).max(1)
}

/// Step-halving until consecutive grids agree; returns the finer values and
/// the last observed change.
fn converged_mode(vc: &ValidatedConfig, j: usize, rule: &CumulativeRule) -> Result<(ModeAmplitudes, f64)> {
    if vc.flight_time == 0.0 {
        return Ok((ModeAmplitudes::default(), 0.0));
    }
    let n = &vc.config().numerics;
    let mut panels = initial_panels(vc, j);
    let mut prev = evaluate_mode(vc, j, &PanelGrid::new(rule, vc.flight_time, panels));
    let mut last = (f64::INFINITY, keys_for_mode(j)[0]);
    for _ in 0..=n.max_refinements {
        panels *= 2;
        let cur = evaluate_mode(vc, j, &PanelGrid::new(rule, vc.flight_time, panels));
        let (diff, key) = cur.max_diff(&prev);
        let bound = n.quad_abs_tol + n.quad_rel_tol * cur.max_abs();
        if diff <= bound {
            return Ok((cur, diff));
        }
        last = (diff, key);
        prev = cur;
    }
    let key = with_mode(last.1, j);
    Err(Error::Quadrature {
        key: key.to_string(),
        estimate: prev.get(key),
        error: last.0,
    })
}

fn with_mode(key: AmplitudeKey, mode: usize) -> AmplitudeKey {
    match key {
        AmplitudeKey::I(k) => AmplitudeKey::I(IKey { mode, ..k }),
        AmplitudeKey::J(k) => AmplitudeKey::J(JKey { mode, ..k }),
    }
}

/// All `I` and `J` values for modes `1..=N` at the configured flight time.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTable {
    pub flight_time: f64,
    pub config_hash: String,
    /// Largest step-halving change seen over all modes.
    pub max_change: f64,
    modes: Vec<ModeAmplitudes>,
}

impl AmplitudeTable {
    pub fn build(vc: &ValidatedConfig, modes: usize) -> Result<Self> {
        let mut table = AmplitudeTable {
            flight_time: vc.flight_time,
            config_hash: vc.config().hash(),
            max_change: 0.0,
            modes: Vec::new(),
        };
        table.extend_to(vc, modes)?;
        Ok(table)
    }

    /// Appends modes up to `modes`; existing entries are left untouched.
    pub fn extend_to(&mut self, vc: &ValidatedConfig, modes: usize) -> Result<()> {
        let start = self.modes.len() + 1;
        if modes < start {
            return Ok(());
        }
        let rule = CumulativeRule::new(vc.config().numerics.gauss_order);
        let fresh: Vec<(ModeAmplitudes, f64)> = (start..=modes)
            .into_par_iter()
            .map(|j| converged_mode(vc, j, &rule))
            .collect::<Result<_>>()?;
        for (m, change) in fresh {
            self.max_change = self.max_change.max(change);
            self.modes.push(m);
        }
        Ok(())
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, j: usize) -> &ModeAmplitudes {
        &self.modes[j - 1]
    }

    pub fn i(&self, label: Label, sign: Sign, j: usize) -> C64 {
        self.mode(j).i(label, sign)
    }

    pub fn j(&self, first: Label, second: Detector, s1: Sign, s2: Sign, mode: usize) -> C64 {
        self.mode(mode).j(first, second, s1, s2)
    }

    pub fn get(&self, key: AmplitudeKey) -> C64 {
        match key {
            AmplitudeKey::I(k) => self.i(k.label, k.sign, k.mode),
            AmplitudeKey::J(k) => self.j(k.first, k.second, k.s1, k.s2, k.mode),
        }
    }

    pub fn entries(&self) -> BTreeMap<AmplitudeKey, C64> {
        (1..=self.mode_count())
            .flat_map(|j| keys_for_mode(j).into_iter().map(move |k| (k, self.get(k))))
            .collect()
    }

    /// CSV dump: `kind,first,second,s1,s2,mode,re,im`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["kind", "first", "second", "s1", "s2", "mode", "re", "im"])?;
        for (k, v) in self.entries() {
            let row: [String; 6] = match k {
                AmplitudeKey::I(k) => [
                    "I".into(),
                    k.label.to_string(),
                    String::new(),
                    k.sign.symbol().to_string(),
                    String::new(),
                    k.mode.to_string(),
                ],
                AmplitudeKey::J(k) => [
                    "J".into(),
                    k.first.to_string(),
                    k.second.symbol().into(),
                    k.s1.symbol().to_string(),
                    k.s2.symbol().to_string(),
                    k.mode.to_string(),
                ],
            };
            let mut rec: Vec<String> = row.into();
            rec.push(fmt_f64(v.re));
            rec.push(fmt_f64(v.im));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `I^{(label)}_{sign,j}(T)` by adaptive bisection, independent of the
/// table's shared grid.
pub fn compute_i(vc: &ValidatedConfig, label: Label, sign: Sign, j: usize) -> Result<C64> {
    let det = vc.detector(label.detector);
    let gap_sign = label.sign().times(sign).value();
    let length = vc.length;
    let n = &vc.config().numerics;
    let opts = AdaptiveOptions {
        rel_tol: n.quad_rel_tol,
        abs_tol: n.quad_abs_tol,
        min_panels: initial_panels(vc, j),
        max_depth: 30,
        order: n.gauss_order,
    };
    let f = |t: f64| integrand(&det, gap_sign, 1.0, j, length, t);
    quadrature::adaptive(f, 0.0, vc.flight_time, &opts)
        .map(|e| e.value)
        .map_err(|e| Error::Quadrature {
            key: AmplitudeKey::I(IKey { label, sign, mode: j }).to_string(),
            estimate: e.value,
            error: e.error,
        })
}

/// Single `J` value by iterated quadrature with the running inner integral,
/// refined by step halving.
pub fn compute_j(vc: &ValidatedConfig, key: JKey) -> Result<C64> {
    let t_end = vc.flight_time;
    if t_end == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let n = &vc.config().numerics;
    let rule = CumulativeRule::new(n.gauss_order);
    let first = vc.detector(key.first.detector);
    let second = vc.detector(key.second);
    let eval = |panels: usize| {
        let grid = PanelGrid::new(&rule, t_end, panels);
        let nodes = grid.nodes();
        let inner: Vec<C64> = nodes
            .iter()
            .map(|&t| integrand(&second, key.s1.value(), key.s2.value(), key.mode, vc.length, t))
            .collect();
        let cum = grid.cumulative(&inner);
        let outer: Vec<C64> = nodes
            .iter()
            .zip(&cum)
            .map(|(&t, g)| integrand(&first, key.first.sign().value(), 1.0, key.mode, vc.length, t) * g)
            .collect();
        grid.integrate(&outer)
    };
    let mut panels = initial_panels(vc, key.mode);
    let mut prev = eval(panels);
    let mut diff = f64::INFINITY;
    for _ in 0..=n.max_refinements {
        panels *= 2;
        let cur = eval(panels);
        diff = (cur - prev).norm();
        if diff <= n.quad_abs_tol + n.quad_rel_tol * cur.norm() {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature {
        key: AmplitudeKey::J(key).to_string(),
        estimate: prev,
        error: diff,
    })
}

/// Closed forms for a stationary detector (switching 1, proper time = t).
pub mod stationary {
    use num_complex::Complex64 as C64;

    const RESONANCE: f64 = 1e-12;

    /// `∫_0^t exp(iνs) ds`
    pub fn window(nu: f64, t: f64) -> C64 {
        if nu.abs() < RESONANCE {
            return C64::new(t, 0.0);
        }
        let half = 0.5 * nu * t;
        C64::from_polar(t * half.sin() / half, half)
    }

    /// `∫_0^t s exp(iνs) ds`
    pub fn first_moment(nu: f64, t: f64) -> C64 {
        if nu.abs() < RESONANCE {
            return C64::new(0.5 * t * t, 0.0);
        }
        let e = C64::from_polar(1.0, nu * t);
        e * t / C64::new(0.0, nu) + (e - 1.0) / (nu * nu)
    }

    /// `I` for a detector with gap `gap`, gap sign `sign`, field frequency
    /// `omega` and mode profile value `profile` at its position.
    pub fn i(gap: f64, sign: f64, omega: f64, profile: f64, t: f64) -> C64 {
        window(sign * gap + omega, t) * profile
    }

    /// `J` with both detectors stationary. `outer_gap` carries the first
    /// label's sign; `inner_gap` the `s1` sign; `inner_field` the `s2` sign.
    pub fn j(outer_gap: f64, inner_gap: f64, inner_field: f64, omega: f64, profiles: f64, t: f64) -> C64 {
        let nu1 = outer_gap + omega;
        let nu2 = inner_gap + inner_field * omega;
        let v = if nu2.abs() < RESONANCE {
            first_moment(nu1, t)
        } else {
            (window(nu1 + nu2, t) - window(nu1, t)) / C64::new(0.0, nu2)
        };
        v * profiles
    }
}
