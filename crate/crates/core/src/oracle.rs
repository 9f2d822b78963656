//! Non-perturbative reference: exact evolution of probe, target and a few
//! field modes in a truncated Fock space.
//!
//! The interaction picture Hamiltonian is applied in cavity time and the
//! state is advanced by the exponential midpoint rule,
//! `ψ ← exp(-i h H(t + h/2)) ψ`, with the exponential applied to the state
//! by a Taylor series summed to machine precision. Step halving stops when
//! the reduced target state moves by less than the tolerance in trace
//! distance; the returned state is the Richardson combination of the last
//! two runs (the method is symmetric, so its error is even in `h`).

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::amplitudes::mode_fn;
use crate::dyson;
use crate::error::{Error, Result};
use crate::model::{Detector, ProbePrep, QubitDensity, ValidatedConfig, COHERENT_MODE};

pub const STEP_TOL: f64 = 1e-10;
pub const TRUNCATION_TOL: f64 = 1e-8;
const START_STEPS: usize = 32;
const MAX_STEPS: usize = 1 << 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncatedSpace {
    pub modes: usize,
    pub n_max: usize,
}

impl Default for TruncatedSpace {
    fn default() -> Self {
        TruncatedSpace { modes: 2, n_max: 10 }
    }
}

impl TruncatedSpace {
    pub fn new(modes: usize, n_max: usize) -> Result<Self> {
        if modes == 0 || n_max == 0 {
            return Err(Error::config("oracle", "need at least one mode and n_max >= 1"));
        }
        Ok(TruncatedSpace { modes, n_max })
    }

    pub fn fock_dim(&self) -> usize {
        (self.n_max + 1).pow(self.modes as u32)
    }

    /// `4 (n_max + 1)^M`
    pub fn dim(&self) -> usize {
        4 * self.fock_dim()
    }

    /// Basis index of `|probe⟩|target⟩|n_1 … n_M⟩`, qubit index 0 = excited.
    fn index(&self, probe: usize, target: usize, fock: usize) -> usize {
        (probe * 2 + target) * self.fock_dim() + fock
    }

    fn occupation(&self, fock: usize, mode: usize) -> usize {
        (fock / (self.n_max + 1).pow(mode as u32)) % (self.n_max + 1)
    }

    /// Probability lost by truncating a coherent state of amplitude `alpha`.
    pub fn coherent_tail(&self, alpha: C64) -> f64 {
        let kept: f64 = coherent_amplitudes(alpha, self.n_max).iter().map(|c| c.norm_sqr()).sum();
        (1.0 - kept).max(0.0)
    }
}

/// Unnormalised `e^{-|α|²/2} α^n / sqrt(n!)` for `n = 0..=n_max`.
fn coherent_amplitudes(alpha: C64, n_max: usize) -> Vec<C64> {
    let mut c = Vec::with_capacity(n_max + 1);
    let mut v = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    c.push(v);
    for n in 1..=n_max {
        v = v * alpha / (n as f64).sqrt();
        c.push(v);
    }
    c
}

/// One operator `σ^s_d ⊗ A_f(mode)` as a sparse list of `(src, dst, amp)`.
struct SparseOp {
    detector: Detector,
    sigma_plus: bool,
    create: bool,
    mode: usize,
    entries: Vec<(usize, usize, f64)>,
}

fn build_ops(space: &TruncatedSpace) -> Vec<SparseOp> {
    let mut ops = Vec::new();
    for detector in Detector::ALL {
        for sigma_plus in [true, false] {
            for mode in 1..=space.modes {
                for create in [true, false] {
                    let mut entries = Vec::new();
                    for p in 0..2 {
                        for q in 0..2 {
                            let bit = if detector == Detector::A { p } else { q };
                            // σ⁺ maps g (1) to e (0)
                            let (from, to) = if sigma_plus { (1, 0) } else { (0, 1) };
                            if bit != from {
                                continue;
                            }
                            let (p2, q2) = if detector == Detector::A { (to, q) } else { (p, to) };
                            let stride = (space.n_max + 1).pow((mode - 1) as u32);
                            for fock in 0..space.fock_dim() {
                                let n = space.occupation(fock, mode - 1);
                                let (m, amp) = if create {
                                    if n == space.n_max {
                                        continue;
                                    }
                                    (fock + stride, ((n + 1) as f64).sqrt())
                                } else {
                                    if n == 0 {
                                        continue;
                                    }
                                    (fock - stride, (n as f64).sqrt())
                                };
                                entries.push((space.index(p, q, fock), space.index(p2, q2, m), amp));
                            }
                        }
                    }
                    ops.push(SparseOp {
                        detector,
                        sigma_plus,
                        create,
                        mode,
                        entries,
                    });
                }
            }
        }
    }
    ops
}

struct Propagator<'a> {
    vc: &'a ValidatedConfig,
    ops: Vec<SparseOp>,
    dim: usize,
}

impl<'a> Propagator<'a> {
    fn coefficients(&self, t: f64) -> Vec<C64> {
        self.ops
            .iter()
            .map(|op| {
                let d = self.vc.detector(op.detector);
                let amp = d.coupling * d.switching(t) * mode_fn(op.mode, d.position(t), self.vc.length);
                let s = if op.sigma_plus { 1.0 } else { -1.0 };
                let f = if op.create { 1.0 } else { -1.0 };
                C64::from_polar(amp, s * d.gap * d.proper_time(t) + f * self.vc.omega(op.mode) * t)
            })
            .collect()
    }

    fn apply_h(&self, coef: &[C64], psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (op, c) in self.ops.iter().zip(coef) {
            if *c == C64::new(0.0, 0.0) {
                continue;
            }
            for &(src, dst, a) in &op.entries {
                out[dst] += c * a * psi[src];
            }
        }
    }

    fn step(&self, psi: &mut [C64], t_mid: f64, h: f64) -> Result<()> {
        let coef = self.coefficients(t_mid);
        let mut term = psi.to_vec();
        let mut next = vec![C64::new(0.0, 0.0); self.dim];
        for k in 1..=60 {
            self.apply_h(&coef, &term, &mut next);
            let scale = C64::new(0.0, -h / k as f64);
            let mut norm = 0.0;
            for (t, n) in term.iter_mut().zip(&next) {
                *t = n * scale;
                norm += t.norm_sqr();
            }
            for (p, t) in psi.iter_mut().zip(&term) {
                *p += t;
            }
            if norm.sqrt() < 1e-18 {
                return Ok(());
            }
        }
        Err(Error::Oracle("Taylor series of the step propagator did not converge".into()))
    }

    fn evolve(&self, space: &TruncatedSpace, steps: usize) -> Result<Matrix2<C64>> {
        let mut psi = initial_state(self.vc, space);
        let t_end = self.vc.flight_time;
        if t_end > 0.0 {
            let h = t_end / steps as f64;
            for k in 0..steps {
                self.step(&mut psi, (k as f64 + 0.5) * h, h)?;
            }
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > STEP_TOL {
            return Err(Error::Oracle(format!("norm drifted to {norm}")));
        }
        Ok(reduce(&psi, space))
    }
}

fn initial_state(vc: &ValidatedConfig, space: &TruncatedSpace) -> Vec<C64> {
    let c = vc.config();
    let probe = ProbePrep::new(C64::new(c.probe.p_re, c.probe.p_im)).ket().expect("validated");
    let (th, ph) = (c.target.theta, c.target.phi);
    let target = [
        C64::new((0.5 * th).cos(), 0.0),
        C64::from_polar((0.5 * th).sin(), ph),
    ];
    let coh = coherent_amplitudes(vc.alpha(), space.n_max);
    let norm = coh.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let stride = (space.n_max + 1).pow((COHERENT_MODE - 1) as u32);
    let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
    for (p, cp) in probe.iter().enumerate() {
        for (q, cq) in target.iter().enumerate() {
            for (n, cn) in coh.iter().enumerate() {
                psi[space.index(p, q, n * stride)] = cp * cq * cn / norm;
            }
        }
    }
    psi
}

/// Target density matrix: trace over probe and field.
fn reduce(psi: &[C64], space: &TruncatedSpace) -> Matrix2<C64> {
    let mut rho = Matrix2::zeros();
    for p in 0..2 {
        for fock in 0..space.fock_dim() {
            for b in 0..2 {
                for b2 in 0..2 {
                    rho[(b, b2)] += psi[space.index(p, b, fock)] * psi[space.index(p, b2, fock)].conj();
                }
            }
        }
    }
    rho
}

/// `½ ‖a − b‖₁` for 2×2 Hermitian matrices.
pub fn trace_distance(a: &Matrix2<C64>, b: &Matrix2<C64>) -> f64 {
    let d = a - b;
    let d = (d + d.adjoint()) * C64::new(0.5, 0.0);
    let mean = 0.5 * (d[(0, 0)].re + d[(1, 1)].re);
    let half = 0.5 * (d[(0, 0)].re - d[(1, 1)].re);
    let r = (half * half + d[(0, 1)].norm_sqr()).sqrt();
    0.5 * ((mean + r).abs() + (mean - r).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub state: QubitDensity,
    pub steps: usize,
    /// Trace distance between the last two step counts.
    pub step_change: f64,
    /// Trace distance to the run with `n_max + 2`.
    pub truncation_change: f64,
    pub coherent_tail: f64,
}

fn converged(vc: &ValidatedConfig, space: &TruncatedSpace) -> Result<(Matrix2<C64>, usize, f64)> {
    let prop = Propagator {
        vc,
        ops: build_ops(space),
        dim: space.dim(),
    };
    if vc.flight_time == 0.0 {
        return Ok((prop.evolve(space, 1)?, 0, 0.0));
    }
    let mut steps = START_STEPS;
    let mut prev = prop.evolve(space, steps)?;
    loop {
        steps *= 2;
        if steps > MAX_STEPS {
            return Err(Error::Oracle(format!("no convergence in {MAX_STEPS} steps")));
        }
        let cur = prop.evolve(space, steps)?;
        let change = trace_distance(&cur, &prev);
        if change < STEP_TOL {
            let rich = (cur * C64::new(4.0, 0.0) - prev) / C64::new(3.0, 0.0);
            return Ok((rich, steps, change));
        }
        prev = cur;
    }
}

/// Target state after exact evolution, with step and truncation checks.
pub fn exact_evolve(vc: &ValidatedConfig, space: &TruncatedSpace) -> Result<ExactResult> {
    let tail = space.coherent_tail(vc.alpha());
    if tail > TRUNCATION_TOL {
        return Err(Error::Oracle(format!(
            "coherent state loses probability {tail} at n_max = {}",
            space.n_max
        )));
    }
    let (rho, steps, step_change) = converged(vc, space)?;
    let wider = TruncatedSpace {
        n_max: space.n_max + 2,
        ..*space
    };
    let (rho2, _, _) = converged(vc, &wider)?;
    let truncation_change = trace_distance(&rho, &rho2);
    if truncation_change > TRUNCATION_TOL {
        return Err(Error::Oracle(format!(
            "result moves by {truncation_change} when n_max grows to {}",
            wider.n_max
        )));
    }
    Ok(ExactResult {
        state: QubitDensity::new(rho).hermitized(),
        steps,
        step_change,
        truncation_change,
        coherent_tail: tail,
    })
}

/// Convergence order of the integrator from runs with `steps`, `2 steps`,
/// `4 steps`: `log2(d1/d2)`.
pub fn measure_order(vc: &ValidatedConfig, space: &TruncatedSpace, steps: usize) -> Result<f64> {
    let prop = Propagator {
        vc,
        ops: build_ops(space),
        dim: space.dim(),
    };
    let r1 = prop.evolve(space, steps)?;
    let r2 = prop.evolve(space, 2 * steps)?;
    let r4 = prop.evolve(space, 4 * steps)?;
    Ok((trace_distance(&r1, &r2) / trace_distance(&r2, &r4)).log2())
}

/// Config matching the oracle: the mode sum in the perturbative pipeline is
/// cut at the oracle's mode count.
pub fn matched_config(vc: &ValidatedConfig, space: &TruncatedSpace, lambda: f64) -> Result<ValidatedConfig> {
    let mut c = vc.config().clone();
    c.probe.coupling = lambda;
    c.target.coupling = lambda;
    c.cavity.modes = space.modes;
    c.numerics.max_modes = space.modes;
    c.validate()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub lambda: f64,
    pub distance: f64,
    pub perturbative: QubitDensity,
    pub exact: QubitDensity,
    pub steps: usize,
    pub step_change: f64,
    pub truncation_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log d` against `log λ`.
    pub exponent: f64,
}

impl ScalingReport {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.exponent >= lo && self.exponent <= hi
    }
}

/// Trace distance between perturbative and exact target states at each
/// `λ = λ_A = λ_B`, and the fitted power law.
pub fn residual_scaling(vc: &ValidatedConfig, space: &TruncatedSpace, lambdas: &[f64]) -> Result<ScalingReport> {
    if lambdas.len() < 2 {
        return Err(Error::config("lambdas", "need at least two coupling values"));
    }
    let points: Vec<ScalingPoint> = lambdas
        .par_iter()
        .map(|&lambda| {
            let cfg = matched_config(vc, space, lambda)?;
            let pert = dyson::assemble(&cfg)?.state;
            let exact = exact_evolve(&cfg, space)?;
            Ok(ScalingPoint {
                lambda,
                distance: trace_distance(pert.matrix(), exact.state.matrix()),
                perturbative: pert,
                exact: exact.state,
                steps: exact.steps,
                step_change: exact.step_change,
                truncation_change: exact.truncation_change,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.lambda.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.distance.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ScalingReport {
        points,
        exponent: sxy / sxx,
    })
}
