//! Second-order Dyson expansion of the joint evolution and the traced
//! target state.
//!
//! The interaction picture Hamiltonian is a sum of primitive terms
//! `λ_d σ^s_d A_f` (one per detector, ladder sign and field operator, per
//! mode). The first-order propagator is `U1 = -i Σ c O`, the second-order one
//! `U2 = -Σ K O O'` with `K` a time-ordered double integral. Every term of
//! `U1 ρ0`, `ρ0 U1†`, `U2 ρ0`, `ρ0 U2†` and `U1 ρ0 U1†` is generated here as
//! a coefficient times `L ρ0 R` with operator words `L` and `R`.
//!
//! Tracing uses `Tr(L ρ R) = Tr(R L ρ)` on the probe and field, and leaves
//! `L_B ρ_B R_B` on the target. Only mode 1 is displaced, so products of
//! operators on different modes average to zero and every surviving term
//! lives on a single mode.

use std::fmt;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::amplitudes::{AmplitudeKey, AmplitudeTable, IKey, JKey, Label, Sign};
use crate::error::{Error, Result};
use crate::model::{Detector, QubitDensity, ValidatedConfig, COHERENT_MODE};
use crate::output::{csv_writer, fmt_f64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldOp {
    /// `a†`
    Create,
    /// `a`
    Annihilate,
}

impl FieldOp {
    pub const BOTH: [FieldOp; 2] = [FieldOp::Create, FieldOp::Annihilate];

    pub fn dagger(self) -> FieldOp {
        match self {
            FieldOp::Create => FieldOp::Annihilate,
            FieldOp::Annihilate => FieldOp::Create,
        }
    }

    /// Sign of `ω t` in the operator's time dependence.
    pub fn sign(self) -> Sign {
        match self {
            FieldOp::Create => Sign::Plus,
            FieldOp::Annihilate => Sign::Minus,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            FieldOp::Create => "a+",
            FieldOp::Annihilate => "a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Sigma(Detector, Sign),
    Field(FieldOp),
}

impl Op {
    pub fn dagger(self) -> Op {
        match self {
            Op::Sigma(d, s) => Op::Sigma(d, s.flip()),
            Op::Field(f) => Op::Field(f.dagger()),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Sigma(d, s) => write!(f, "{}{}", d.symbol(), s.symbol()),
            Op::Field(op) => write!(f, "{}", op.symbol()),
        }
    }
}

pub fn word_dagger(word: &[Op]) -> Vec<Op> {
    word.iter().rev().map(|o| o.dagger()).collect()
}

fn sigmas(word: &[Op], d: Detector) -> Vec<Sign> {
    word.iter()
        .filter_map(|o| match *o {
            Op::Sigma(e, s) if e == d => Some(s),
            _ => None,
        })
        .collect()
}

fn fields(word: &[Op]) -> Vec<FieldOp> {
    word.iter()
        .filter_map(|o| match *o {
            Op::Field(f) => Some(f),
            _ => None,
        })
        .collect()
}

fn has_square(signs: &[Sign]) -> bool {
    signs.windows(2).any(|w| w[0] == w[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    U1Rho,
    RhoU1Dag,
    U2Rho,
    RhoU2Dag,
    U1RhoU1Dag,
}

impl Family {
    pub fn symbol(self) -> &'static str {
        match self {
            Family::U1Rho => "U1rho",
            Family::RhoU1Dag => "rhoU1dag",
            Family::U2Rho => "U2rho",
            Family::RhoU2Dag => "rhoU2dag",
            Family::U1RhoU1Dag => "U1rhoU1dag",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        [
            Family::U1Rho,
            Family::RhoU1Dag,
            Family::U2Rho,
            Family::RhoU2Dag,
            Family::U1RhoU1Dag,
        ]
        .into_iter()
        .find(|f| f.symbol() == s.trim())
    }

    pub fn order(self) -> usize {
        match self {
            Family::U1Rho | Family::RhoU1Dag => 1,
            _ => 2,
        }
    }
}

/// An amplitude without its mode index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AmpSpec {
    I { label: Label, sign: Sign },
    J { first: Label, second: Detector, s1: Sign, s2: Sign },
}

impl AmpSpec {
    pub fn key(self, mode: usize) -> AmplitudeKey {
        match self {
            AmpSpec::I { label, sign } => AmplitudeKey::I(IKey { label, sign, mode }),
            AmpSpec::J { first, second, s1, s2 } => AmplitudeKey::J(JKey {
                first,
                second,
                s1,
                s2,
                mode,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AmpFactor {
    pub amp: AmpSpec,
    pub conj: bool,
}

impl AmpFactor {
    pub fn value(&self, table: &AmplitudeTable, mode: usize) -> C64 {
        let v = table.get(self.amp.key(mode));
        if self.conj {
            v.conj()
        } else {
            v
        }
    }

    /// Printed form with the mode written as `m`, e.g. `J[+,-,1](-A,B)*`.
    pub fn render(&self, m: &str) -> String {
        let base = match self.amp {
            AmpSpec::I { label, sign } => format!("I[{},{m}]({label})", sign.symbol()),
            AmpSpec::J { first, second, s1, s2 } => {
                format!("J[{},{},{m}]({first},{})", s1.symbol(), s2.symbol(), second.symbol())
            }
        };
        if self.conj {
            base + "*"
        } else {
            base
        }
    }
}

/// One term `phase · Π λ · Π amplitudes · L ρ0 R` for a single mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperatorTerm {
    pub family: Family,
    /// Phase `i^k`.
    pub quarter_turns: u8,
    /// One coupling per primitive, in operator order.
    pub couplings: Vec<Detector>,
    pub factors: Vec<AmpFactor>,
    pub left: Vec<Op>,
    pub right: Vec<Op>,
}

impl OperatorTerm {
    pub fn phase(&self) -> C64 {
        match self.quarter_turns % 4 {
            0 => ONE,
            1 => C64::new(0.0, 1.0),
            2 => -ONE,
            _ => C64::new(0.0, -1.0),
        }
    }

    pub fn phase_symbol(&self) -> &'static str {
        match self.quarter_turns % 4 {
            0 => "+",
            1 => "+i",
            2 => "-",
            _ => "-i",
        }
    }

    pub fn block(&self) -> String {
        self.couplings.iter().map(|d| d.symbol()).collect()
    }

    pub fn coupling(&self, vc: &ValidatedConfig) -> f64 {
        self.couplings.iter().map(|&d| vc.coupling(d)).product()
    }

    /// Product of the amplitude factors at `mode`.
    pub fn amplitude(&self, table: &AmplitudeTable, mode: usize) -> C64 {
        self.factors.iter().fold(ONE, |acc, f| acc * f.value(table, mode))
    }

    pub fn coefficient_symbol(&self, m: &str) -> String {
        self.factors.iter().map(|f| f.render(m)).collect::<Vec<_>>().join(" ")
    }

    /// True when a repeated ladder operator on one atom forces the term to
    /// zero for every state.
    pub fn vanishes(&self) -> bool {
        for d in Detector::ALL {
            if has_square(&sigmas(&self.left, d)) || has_square(&sigmas(&self.right, d)) {
                return true;
            }
        }
        let mut traced = sigmas(&self.right, Detector::A);
        traced.extend(sigmas(&self.left, Detector::A));
        has_square(&traced)
    }

    pub fn trace(&self) -> TracedTerm {
        let mut probe = sigmas(&self.right, Detector::A);
        probe.extend(sigmas(&self.left, Detector::A));
        let mut field = fields(&self.right);
        field.extend(fields(&self.left));
        TracedTerm {
            term: self.clone(),
            probe,
            field,
            target_left: sigmas(&self.left, Detector::B),
            target_right: sigmas(&self.right, Detector::B),
        }
    }
}

fn word_string(w: &[Op]) -> String {
    w.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for OperatorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} lambda_{} {} [{}] rho [{}]",
            self.family.symbol(),
            self.phase_symbol(),
            self.block(),
            self.coefficient_symbol("j"),
            word_string(&self.left),
            word_string(&self.right)
        )
    }
}

/// A primitive `c σ^s_d A_f` of `U1 = -i Σ λ c σ A`.
#[derive(Debug, Clone, Copy)]
struct Primitive {
    detector: Detector,
    sign: Sign,
    field: FieldOp,
}

impl Primitive {
    fn all() -> Vec<Primitive> {
        let mut v = Vec::with_capacity(8);
        for detector in Detector::ALL {
            for sign in Sign::BOTH {
                for field in FieldOp::BOTH {
                    v.push(Primitive { detector, sign, field });
                }
            }
        }
        v
    }

    /// `σ⁺a† → I₊`, `σ⁻a† → I₋`, `σ⁺a → I₋*`, `σ⁻a → I₊*`.
    fn coefficient(&self) -> AmpFactor {
        let label = Label::plain(self.detector);
        match self.field {
            FieldOp::Create => AmpFactor {
                amp: AmpSpec::I { label, sign: self.sign },
                conj: false,
            },
            FieldOp::Annihilate => AmpFactor {
                amp: AmpSpec::I {
                    label,
                    sign: self.sign.flip(),
                },
                conj: true,
            },
        }
    }

    fn word(&self) -> Vec<Op> {
        vec![Op::Sigma(self.detector, self.sign), Op::Field(self.field)]
    }
}

/// Time-ordered coefficient of `O1(t1) O2(t2)`.
fn pair_coefficient(p1: &Primitive, p2: &Primitive) -> AmpFactor {
    match p1.field {
        FieldOp::Create => AmpFactor {
            amp: AmpSpec::J {
                first: Label::signed(p1.detector, p1.sign),
                second: p2.detector,
                s1: p2.sign,
                s2: p2.field.sign(),
            },
            conj: false,
        },
        FieldOp::Annihilate => AmpFactor {
            amp: AmpSpec::J {
                first: Label::signed(p1.detector, p1.sign.flip()),
                second: p2.detector,
                s1: p2.sign.flip(),
                s2: p2.field.sign().flip(),
            },
            conj: true,
        },
    }
}

fn conj(f: AmpFactor) -> AmpFactor {
    AmpFactor { conj: !f.conj, ..f }
}

/// Terms of `U1 ρ0` (order 1, 8 per mode) or of `U2 ρ0`, `ρ0 U2†` and
/// `U1 ρ0 U1†` (order 2), with identically vanishing terms removed.
pub fn expand_terms(order: usize) -> Result<Vec<OperatorTerm>> {
    let prims = Primitive::all();
    let mut out = Vec::new();
    match order {
        1 => {
            for p in &prims {
                out.push(OperatorTerm {
                    family: Family::U1Rho,
                    quarter_turns: 3,
                    couplings: vec![p.detector],
                    factors: vec![p.coefficient()],
                    left: p.word(),
                    right: vec![],
                });
            }
        }
        2 => {
            for p1 in &prims {
                for p2 in &prims {
                    let k = pair_coefficient(p1, p2);
                    let mut word = p1.word();
                    word.extend(p2.word());
                    let couplings = vec![p1.detector, p2.detector];
                    out.push(OperatorTerm {
                        family: Family::U2Rho,
                        quarter_turns: 2,
                        couplings: couplings.clone(),
                        factors: vec![k],
                        left: word.clone(),
                        right: vec![],
                    });
                    out.push(OperatorTerm {
                        family: Family::RhoU2Dag,
                        quarter_turns: 2,
                        couplings,
                        factors: vec![conj(k)],
                        left: vec![],
                        right: word_dagger(&word),
                    });
                    out.push(OperatorTerm {
                        family: Family::U1RhoU1Dag,
                        quarter_turns: 0,
                        couplings: vec![p1.detector, p2.detector],
                        factors: vec![p1.coefficient(), conj(p2.coefficient())],
                        left: p1.word(),
                        right: word_dagger(&p2.word()),
                    });
                }
            }
        }
        _ => return Err(Error::Unsupported(format!("expansion order {order}"))),
    }
    out.retain(|t| !t.vanishes());
    out.sort();
    Ok(out)
}

/// `ρ0 U1†` terms, the conjugate partners of order 1.
pub fn first_order_right_terms() -> Vec<OperatorTerm> {
    let mut v: Vec<OperatorTerm> = Primitive::all()
        .iter()
        .map(|p| OperatorTerm {
            family: Family::RhoU1Dag,
            quarter_turns: 1,
            couplings: vec![p.detector],
            factors: vec![conj(p.coefficient())],
            left: vec![],
            right: word_dagger(&p.word()),
        })
        .collect();
    v.sort();
    v
}

/// A term after the probe and field traces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TracedTerm {
    pub term: OperatorTerm,
    /// `R_A L_A`
    pub probe: Vec<Sign>,
    /// `R_f L_f`
    pub field: Vec<FieldOp>,
    pub target_left: Vec<Sign>,
    pub target_right: Vec<Sign>,
}

impl TracedTerm {
    pub fn probe_class(&self) -> ProbeClass {
        ProbeClass::of(&self.probe)
    }

    pub fn target_symbol(&self) -> String {
        let side = |w: &[Sign]| w.iter().map(|s| format!("s{}", s.symbol())).collect::<Vec<_>>();
        let mut parts = side(&self.target_left);
        parts.push("rho".into());
        parts.extend(side(&self.target_right));
        parts.join(" ")
    }
}

fn traced_second_order() -> &'static [TracedTerm] {
    static TERMS: OnceLock<Vec<TracedTerm>> = OnceLock::new();
    TERMS.get_or_init(|| {
        expand_terms(2)
            .expect("order 2 is supported")
            .iter()
            .map(|t| t.trace())
            .collect()
    })
}

fn traced_first_order() -> &'static [TracedTerm] {
    static TERMS: OnceLock<Vec<TracedTerm>> = OnceLock::new();
    TERMS.get_or_init(|| {
        let mut v = expand_terms(1).expect("order 1 is supported");
        v.extend(first_order_right_terms());
        v.iter().map(|t| t.trace()).collect()
    })
}

/// All traced terms of both orders, sorted.
pub fn traced_terms() -> Vec<TracedTerm> {
    let mut v: Vec<TracedTerm> = traced_first_order().to_vec();
    v.extend_from_slice(traced_second_order());
    v.sort();
    v
}

/// Probe factor of a traced term in terms of the entries of
/// `ρ_A = [[η, γ], [γ*, β]]` (excited state first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeClass {
    One,
    /// `⟨σ⁺σ⁻⟩`
    Eta,
    /// `⟨σ⁻σ⁺⟩`
    Beta,
    /// `⟨σ⁻⟩`
    Gamma,
    /// `⟨σ⁺⟩`
    GammaConj,
    Zero,
}

impl ProbeClass {
    pub fn of(word: &[Sign]) -> ProbeClass {
        use Sign::*;
        match word {
            [] => ProbeClass::One,
            [Plus, Minus] => ProbeClass::Eta,
            [Minus, Plus] => ProbeClass::Beta,
            [Minus] => ProbeClass::Gamma,
            [Plus] => ProbeClass::GammaConj,
            _ => ProbeClass::Zero,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ProbeClass::One => "1",
            ProbeClass::Eta => "eta",
            ProbeClass::Beta => "beta",
            ProbeClass::Gamma => "g",
            ProbeClass::GammaConj => "g*",
            ProbeClass::Zero => "0",
        }
    }
}

/// Field factor of a traced term on a given kind of mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldClass {
    One,
    Alpha,
    AlphaConj,
    AlphaSq,
    AlphaConjSq,
    AbsSq,
    OnePlusAbsSq,
    Zero,
}

impl FieldClass {
    pub fn of(word: &[FieldOp], coherent: bool) -> FieldClass {
        use FieldOp::*;
        if !coherent {
            return match word {
                [] | [Annihilate, Create] => FieldClass::One,
                _ => FieldClass::Zero,
            };
        }
        match word {
            [] => FieldClass::One,
            [Annihilate] => FieldClass::Alpha,
            [Create] => FieldClass::AlphaConj,
            [Annihilate, Annihilate] => FieldClass::AlphaSq,
            [Create, Create] => FieldClass::AlphaConjSq,
            [Create, Annihilate] => FieldClass::AbsSq,
            [Annihilate, Create] => FieldClass::OnePlusAbsSq,
            _ => FieldClass::Zero,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            FieldClass::One => "1",
            FieldClass::Alpha => "a",
            FieldClass::AlphaConj => "a*",
            FieldClass::AlphaSq => "a^2",
            FieldClass::AlphaConjSq => "a*^2",
            FieldClass::AbsSq => "|a|^2",
            FieldClass::OnePlusAbsSq => "1+|a|^2",
            FieldClass::Zero => "0",
        }
    }
}

/// `⟨word⟩` in a coherent state of amplitude `alpha` (vacuum for 0).
pub fn field_expectation(word: &[FieldOp], alpha: C64) -> Result<C64> {
    use FieldOp::*;
    let n = alpha.norm_sqr();
    Ok(match word {
        [] => ONE,
        [Annihilate] => alpha,
        [Create] => alpha.conj(),
        [Create, Annihilate] => C64::new(n, 0.0),
        [Annihilate, Create] => C64::new(1.0 + n, 0.0),
        [Annihilate, Annihilate] => alpha * alpha,
        [Create, Create] => alpha.conj() * alpha.conj(),
        _ => {
            return Err(Error::Unsupported(format!(
                "field word of length {} (at most 2 supported)",
                word.len()
            )))
        }
    })
}

/// Coherent amplitude of `mode` in the initial field state.
pub fn mode_alpha(vc: &ValidatedConfig, mode: usize) -> C64 {
    if mode == COHERENT_MODE {
        vc.alpha()
    } else {
        ZERO
    }
}

fn sigma(s: Sign) -> Matrix2<C64> {
    match s {
        Sign::Plus => Matrix2::new(ZERO, ONE, ZERO, ZERO),
        Sign::Minus => Matrix2::new(ZERO, ZERO, ONE, ZERO),
    }
}

fn product(word: &[Sign]) -> Matrix2<C64> {
    word.iter().fold(Matrix2::identity(), |acc, &s| acc * sigma(s))
}

/// `Tr(word · ρ_A)`
pub fn probe_expectation(word: &[Sign], rho: &QubitDensity) -> C64 {
    (product(word) * rho.matrix()).trace()
}

/// Matrix of `ρ ↦ L ρ R` acting on `vec(ρ)` with index `2i + k`.
fn sandwich_map(l: &Matrix2<C64>, r: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|row, col| {
        let (i, k) = (row / 2, row % 2);
        let (j, m) = (col / 2, col % 2);
        l[(i, j)] * r[(m, k)]
    })
}

fn vectorise(rho: &Matrix2<C64>) -> Vector4<C64> {
    Vector4::new(rho[(0, 0)], rho[(0, 1)], rho[(1, 0)], rho[(1, 1)])
}

fn unvectorise(v: &Vector4<C64>) -> Matrix2<C64> {
    Matrix2::new(v[0], v[1], v[2], v[3])
}

fn max_abs4(m: &Matrix4<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A second-order term with everything but the mode-dependent factors
/// folded into a 4×4 map.
struct Weighted<'t> {
    term: &'t TracedTerm,
    map: Matrix4<C64>,
}

fn weighted_terms<'t>(vc: &ValidatedConfig, terms: &'t [TracedTerm]) -> Vec<Weighted<'t>> {
    let rho_a = vc.probe_state();
    terms
        .iter()
        .filter_map(|t| {
            let scale = t.term.phase() * t.term.coupling(vc) * probe_expectation(&t.probe, &rho_a);
            if scale == ZERO {
                return None;
            }
            let map = sandwich_map(&product(&t.target_left), &product(&t.target_right)) * scale;
            Some(Weighted { term: t, map })
        })
        .collect()
}

fn mode_map(ws: &[Weighted], vc: &ValidatedConfig, table: &AmplitudeTable, mode: usize) -> Result<Matrix4<C64>> {
    let alpha = mode_alpha(vc, mode);
    let mut acc = Matrix4::zeros();
    for w in ws {
        let f = field_expectation(&w.term.field, alpha)?;
        if f == ZERO {
            continue;
        }
        acc += w.map * (f * w.term.term.amplitude(table, mode));
    }
    Ok(acc)
}

fn modes_map(ws: &[Weighted], vc: &ValidatedConfig, table: &AmplitudeTable, from: usize, to: usize) -> Result<Matrix4<C64>> {
    let parts: Vec<Matrix4<C64>> = (from..=to)
        .into_par_iter()
        .map(|j| mode_map(ws, vc, table, j))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Matrix4::zeros(), |a, b| a + b))
}

/// Hermitian generator `M` of the first-order correction `-i[M, ρ]`, and
/// diagnostics: the mismatch between the `U1ρ` and `ρU1†` families, and the
/// magnitude of the probe-only contribution (which cancels identically).
pub fn first_order_generator(vc: &ValidatedConfig, table: &AmplitudeTable) -> Result<(Matrix2<C64>, f64, f64)> {
    let rho_a = vc.probe_state();
    let mut left = Matrix2::zeros();
    let mut right = Matrix2::zeros();
    let mut probe_only = ZERO;
    for j in 1..=table.mode_count() {
        let alpha = mode_alpha(vc, j);
        for t in traced_first_order() {
            let f = field_expectation(&t.field, alpha)?;
            if f == ZERO {
                continue;
            }
            let c = t.term.phase() * t.term.coupling(vc) * t.term.amplitude(table, j) * f;
            if t.target_left.is_empty() && t.target_right.is_empty() {
                probe_only += c * probe_expectation(&t.probe, &rho_a);
            } else if t.term.family == Family::U1Rho {
                left += product(&t.target_left) * c;
            } else {
                right += product(&t.target_right) * c;
            }
        }
    }
    // left = -iM, right = +iM
    let m = left * C64::new(0.0, 1.0);
    let mismatch = (right - m * C64::new(0.0, 1.0)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    Ok((herm, mismatch, probe_only.norm()))
}

/// `-i[M, ρ]` with exactly zero trace and exact Hermiticity.
pub fn commutator_correction(m: &Matrix2<C64>, rho: &Matrix2<C64>) -> Matrix2<C64> {
    let c = (m * rho - rho * m) * C64::new(0.0, -1.0);
    let d = C64::new(c[(0, 0)].re, 0.0);
    let off = c[(0, 1)];
    Matrix2::new(d, off, off.conj(), -d)
}

/// First-order correction of the target state.
pub fn reduced_first_order(vc: &ValidatedConfig, table: &AmplitudeTable) -> Result<Matrix2<C64>> {
    let (m, _, _) = first_order_generator(vc, table)?;
    Ok(commutator_correction(&m, vc.target_state().matrix()))
}

/// Second-order correction of the target state from the modes present in
/// `table`, without any mode-convergence check.
pub fn reduced_second_order(vc: &ValidatedConfig, table: &AmplitudeTable) -> Result<Matrix2<C64>> {
    let ws = weighted_terms(vc, traced_second_order());
    let map = modes_map(&ws, vc, table, 1, table.mode_count())?;
    Ok(unvectorise(&(map * vectorise(vc.target_state().matrix()))))
}

/// Target-state-independent part of the reduced evolution at one
/// configuration: `ρ ↦ ρ - i[M, ρ] + S(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDynamics {
    pub generator: Matrix2<C64>,
    pub second: Matrix4<C64>,
    /// `max |ρU1† − (U1ρ)†|` coefficient mismatch.
    pub first_order_mismatch: f64,
    /// Magnitude of the probe-only first-order terms after tracing.
    pub probe_first_order: f64,
    pub modes: usize,
    /// Size of the last mode block added.
    pub mode_delta: f64,
    /// Mode sum stopped at `max_modes` without a convergence check.
    pub mode_limited: bool,
    pub quadrature_change: f64,
    /// Largest coupling, used for the negativity budget.
    pub coupling: f64,
}

impl ReducedDynamics {
    pub fn build(vc: &ValidatedConfig) -> Result<Self> {
        let mut table = AmplitudeTable::build(vc, vc.config().cavity.modes)?;
        Self::with_table(vc, &mut table)
    }

    /// Uses (and extends) an existing amplitude table.
    pub fn with_table(vc: &ValidatedConfig, table: &mut AmplitudeTable) -> Result<Self> {
        let n = &vc.config().numerics;
        let mut modes = vc.config().cavity.modes;
        table.extend_to(vc, modes)?;
        let ws = weighted_terms(vc, traced_second_order());
        let mut second = modes_map(&ws, vc, table, 1, modes)?;
        let mode_limited = modes >= n.max_modes;
        let mut mode_delta = f64::NAN;
        if !mode_limited {
            loop {
                let next = (2 * modes).min(n.max_modes);
                table.extend_to(vc, next)?;
                let tail = modes_map(&ws, vc, table, modes + 1, next)?;
                second += tail;
                mode_delta = max_abs4(&tail);
                modes = next;
                if mode_delta <= n.mode_tol {
                    break;
                }
                if next == n.max_modes {
                    return Err(Error::ModeConvergence {
                        modes: next,
                        delta: mode_delta,
                    });
                }
            }
        }
        let (generator, first_order_mismatch, probe_first_order) = first_order_generator(vc, table)?;
        Ok(ReducedDynamics {
            generator,
            second,
            first_order_mismatch,
            probe_first_order,
            modes,
            mode_delta,
            mode_limited,
            quadrature_change: table.max_change,
            coupling: vc.coupling(Detector::A).max(vc.coupling(Detector::B)),
        })
    }

    pub fn first_order(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        commutator_correction(&self.generator, rho)
    }

    pub fn second_order(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        unvectorise(&(self.second * vectorise(rho)))
    }

    pub fn apply(&self, initial: &QubitDensity) -> ReducedState {
        let rho = initial.matrix();
        let first = self.first_order(rho);
        let second = self.second_order(rho);
        let raw = QubitDensity::new(rho + first + second);
        let state = raw.hermitized();
        let min_eigenvalue = state.eigenvalues()[0];
        let budget = -10.0 * self.coupling.powi(3);
        ReducedState {
            initial: *initial,
            first,
            second,
            diagnostics: Diagnostics {
                trace_first: first.trace().norm(),
                trace_second: second.trace().norm(),
                hermiticity_defect: raw.hermiticity_defect(),
                min_eigenvalue,
                negativity_exceeded: min_eigenvalue < budget,
                modes: self.modes,
                mode_delta: self.mode_delta,
                mode_limited: self.mode_limited,
                quadrature_change: self.quadrature_change,
                first_order_mismatch: self.first_order_mismatch,
                probe_first_order: self.probe_first_order,
            },
            state,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub trace_first: f64,
    pub trace_second: f64,
    /// Before symmetrisation.
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    /// Minimum eigenvalue below `-10 λ³`.
    pub negativity_exceeded: bool,
    pub modes: usize,
    pub mode_delta: f64,
    pub mode_limited: bool,
    pub quadrature_change: f64,
    pub first_order_mismatch: f64,
    pub probe_first_order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub initial: QubitDensity,
    pub first: Matrix2<C64>,
    pub second: Matrix2<C64>,
    /// `ρ0 + ρ1 + ρ2`, symmetrised.
    pub state: QubitDensity,
    pub diagnostics: Diagnostics,
}

/// Target state after the probe's flight, to second order.
pub fn assemble(vc: &ValidatedConfig) -> Result<ReducedState> {
    Ok(ReducedDynamics::build(vc)?.apply(&vc.target_state()))
}

/// Per-mode dump of every traced term: symbolic key, numeric coefficient
/// and both expectations.
pub fn write_terms_csv<W: Write>(vc: &ValidatedConfig, table: &AmplitudeTable, w: W) -> Result<()> {
    let rho_a = vc.probe_state();
    let mut out = csv_writer(w);
    out.write_record([
        "mode",
        "family",
        "phase",
        "block",
        "coefficient",
        "probe",
        "field",
        "target",
        "coef_re",
        "coef_im",
        "field_re",
        "field_im",
        "probe_re",
        "probe_im",
    ])?;
    let terms = traced_terms();
    for j in 1..=table.mode_count() {
        let alpha = mode_alpha(vc, j);
        for t in &terms {
            let c = t.term.phase() * t.term.coupling(vc) * t.term.amplitude(table, j);
            let f = field_expectation(&t.field, alpha)?;
            let p = probe_expectation(&t.probe, &rho_a);
            let m = if j == COHERENT_MODE { "1" } else { "j" };
            out.write_record([
                j.to_string(),
                t.term.family.symbol().into(),
                t.term.phase_symbol().into(),
                t.term.block(),
                t.term.coefficient_symbol(m),
                t.probe_class().symbol().into(),
                FieldClass::of(&t.field, j == COHERENT_MODE).symbol().into(),
                t.target_symbol(),
                fmt_f64(c.re),
                fmt_f64(c.im),
                fmt_f64(f.re),
                fmt_f64(f.im),
                fmt_f64(p.re),
                fmt_f64(p.im),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimulationConfig;
    use std::f64::consts::PI;

    fn config() -> SimulationConfig {
        let mut c = SimulationConfig::default();
        c.cavity.modes = 4;
        c.numerics.max_modes = 64;
        c
    }

    #[test]
    fn term_counts() {
        let one = expand_terms(1).unwrap();
        assert_eq!(one.len(), 8);
        let two = expand_terms(2).unwrap();
        let count = |f| two.iter().filter(|t| t.family == f).count();
        assert_eq!(count(Family::U2Rho), 48);
        assert_eq!(count(Family::RhoU2Dag), 48);
        assert_eq!(count(Family::U1RhoU1Dag), 56);
        assert!(expand_terms(3).is_err());
    }

    #[test]
    fn printed_first_order_coefficients() {
        let one = expand_terms(1).unwrap();
        let find = |s: Sign, f: FieldOp| {
            one.iter()
                .find(|t| t.left == vec![Op::Sigma(Detector::A, s), Op::Field(f)])
                .unwrap()
                .coefficient_symbol("j")
        };
        assert_eq!(find(Sign::Plus, FieldOp::Create), "I[+,j](A)");
        assert_eq!(find(Sign::Minus, FieldOp::Create), "I[-,j](A)");
        assert_eq!(find(Sign::Plus, FieldOp::Annihilate), "I[-,j](A)*");
        assert_eq!(find(Sign::Minus, FieldOp::Annihilate), "I[+,j](A)*");
    }

    #[test]
    fn cross_coefficient_example() {
        let two = expand_terms(2).unwrap();
        let word = vec![
            Op::Sigma(Detector::A, Sign::Plus),
            Op::Field(FieldOp::Create),
            Op::Sigma(Detector::B, Sign::Plus),
            Op::Field(FieldOp::Create),
        ];
        let t = two.iter().find(|t| t.family == Family::U2Rho && t.left == word).unwrap();
        assert_eq!(t.coefficient_symbol("1"), "J[+,+,1](A,B)");
        assert_eq!(t.phase(), -ONE);
        assert_eq!(t.block(), "AB");
    }

    #[test]
    fn no_squared_ladder_survives() {
        for t in traced_terms() {
            assert_ne!(t.probe_class(), ProbeClass::Zero, "{}", t.term);
            assert!(!has_square(&t.target_left) && !has_square(&t.target_right));
        }
    }

    #[test]
    fn field_expectations() {
        use FieldOp::*;
        let a = C64::new(1.0, 0.0);
        assert_eq!(field_expectation(&[Annihilate, Create], a).unwrap(), C64::new(2.0, 0.0));
        assert_eq!(field_expectation(&[Annihilate, Create], ZERO).unwrap(), ONE);
        assert_eq!(field_expectation(&[Create, Create], ZERO).unwrap(), ZERO);
        let n = field_expectation(&[Create, Annihilate], C64::new(0.3, 0.0)).unwrap();
        assert!((n.re - 0.09).abs() < 1e-16);
        let b = C64::new(0.3, -0.7);
        assert_eq!(field_expectation(&[Create, Create], b).unwrap(), b.conj() * b.conj());
        assert!(matches!(
            field_expectation(&[Create, Create, Annihilate], b),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn probe_expectations() {
        let rho = QubitDensity::from_ket([ONE, ZERO]);
        assert_eq!(probe_expectation(&[], &rho), ONE);
        assert_eq!(probe_expectation(&[Sign::Plus, Sign::Minus], &rho), ONE);
        let p: f64 = 0.6;
        let (eta, gamma) = (p * p, p * (1.0 - p * p).sqrt());
        let r = QubitDensity::new(Matrix2::new(
            C64::new(eta, 0.0),
            C64::new(gamma, 0.0),
            C64::new(gamma, 0.0),
            C64::new(1.0 - eta, 0.0),
        ));
        assert!((probe_expectation(&[Sign::Plus], &r) - C64::new(0.48, 0.0)).norm() < 1e-15);
        let c = QubitDensity::new(Matrix2::new(
            C64::new(0.5, 0.0),
            C64::new(0.1, 0.2),
            C64::new(0.1, -0.2),
            C64::new(0.5, 0.0),
        ));
        assert_eq!(probe_expectation(&[Sign::Plus], &c), C64::new(0.1, -0.2));
        assert_eq!(probe_expectation(&[Sign::Minus], &c), C64::new(0.1, 0.2));
    }

    #[test]
    fn zero_couplings_leave_state_unchanged() {
        let mut c = config();
        c.probe.coupling = 0.0;
        c.target.coupling = 0.0;
        let vc = c.validate().unwrap();
        let r = assemble(&vc).unwrap();
        assert_eq!(r.state, vc.target_state());
    }

    #[test]
    fn empty_window_leaves_state_unchanged() {
        let mut c = config();
        c.probe.flight_time = Some(0.0);
        let vc = c.validate().unwrap();
        let r = assemble(&vc).unwrap();
        assert_eq!(r.state, vc.target_state());
    }

    #[test]
    fn first_order_vanishes_without_target_coupling_or_field() {
        let mut c = config();
        c.target.coupling = 0.0;
        let vc = c.validate().unwrap();
        let t = AmplitudeTable::build(&vc, 2).unwrap();
        assert_eq!(reduced_first_order(&vc, &t).unwrap(), Matrix2::zeros());

        let mut c = config();
        c.field.alpha_re = 0.0;
        let vc = c.validate().unwrap();
        let t = AmplitudeTable::build(&vc, 2).unwrap();
        assert_eq!(reduced_first_order(&vc, &t).unwrap(), Matrix2::zeros());
    }

    #[test]
    fn generic_state_is_consistent() {
        let mut c = config();
        c.probe.a = 1.3;
        c.probe.flight_time = Some(1.1);
        c.field.alpha_im = 0.4;
        let vc = c.validate().unwrap();
        let r = assemble(&vc).unwrap();
        let d = r.diagnostics;
        assert_eq!(d.trace_first, 0.0);
        assert!(d.trace_second < 1e-10, "{}", d.trace_second);
        assert!(d.hermiticity_defect < 1e-12, "{}", d.hermiticity_defect);
        assert!((r.state.trace().re - 1.0).abs() < 1e-8);
        assert!(d.first_order_mismatch < 1e-15, "{}", d.first_order_mismatch);
        assert!(d.probe_first_order < 1e-15, "{}", d.probe_first_order);
    }

    #[test]
    fn probe_off_has_no_probe_dependence() {
        let mut c = config();
        c.probe.coupling = 0.0;
        let a = assemble(&c.validate().unwrap()).unwrap();
        c.probe.p_im = 0.9;
        c.probe.a = 2.0;
        let b = assemble(&c.validate().unwrap()).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn stationary_target_second_order_matches_closed_form() {
        // vacuum, target only: excitation from |g⟩ is Σ_j λ² |I_{+,j}|²
        let mut c = config();
        c.probe.coupling = 0.0;
        c.field.alpha_re = 0.0;
        c.target.theta = PI;
        c.target.phi = 0.0;
        c.cavity.modes = 3;
        c.numerics.max_modes = 3;
        let vc = c.validate().unwrap();
        let r = assemble(&vc).unwrap();
        let lam = vc.coupling(Detector::B);
        let mut expected = 0.0;
        for j in 1..=3 {
            let f = crate::amplitudes::mode_fn(j, vc.target_x, vc.length);
            let i = crate::amplitudes::stationary::i(1.0, 1.0, vc.omega(j), f, vc.flight_time);
            expected += lam * lam * i.norm_sqr();
        }
        assert!((r.state.matrix()[(0, 0)].re - expected).abs() < 1e-14);
        assert!(r.diagnostics.mode_limited);
    }

    #[test]
    fn mode_convergence_failure() {
        let mut c = config();
        c.cavity.modes = 1;
        c.numerics.max_modes = 2;
        c.numerics.mode_tol = 1e-300;
        let err = ReducedDynamics::build(&c.validate().unwrap()).unwrap_err();
        assert!(matches!(err, Error::ModeConvergence { modes: 2, .. }), "{err}");
    }

    #[test]
    fn terms_dump_has_header_and_rows() {
        let vc = config().validate().unwrap();
        let t = AmplitudeTable::build(&vc, 2).unwrap();
        let mut buf = Vec::new();
        write_terms_csv(&vc, &t, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert!(lines[0].starts_with("mode,family,phase"));
        assert_eq!(lines.len(), 1 + 2 * traced_terms().len());
    }
}
