//! Gauss-Legendre panel quadrature for smooth oscillatory integrands.
//!
//! Two entry points: [`adaptive`] bisects panels until an `n`-point and a
//! `2n`-point rule agree, and [`PanelGrid`] lays a fixed rule over uniform
//! panels and also provides the running integral at every node, which is how
//! the ordered double integrals are evaluated without an O(n²) nested sweep.

use num_complex::Complex64 as C64;

/// Nodes and weights on [-1, 1], nodes ascending.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ∫_a^b f
    pub fn integrate<F: Fn(f64) -> C64>(&self, f: &F, a: f64, b: f64) -> C64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = C64::new(0.0, 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += f(mid + half * x) * *w;
        }
        s * half
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (p, pm1) = legendre_pair(n, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p - pm1) / (x * x - 1.0);
    (p, d)
}

/// (P_n(x), P_{n-1}(x)); P_{-1} is taken as 0.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 2..=n {
        let kf = k as f64;
        p[k] = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
    }
    p
}

/// Gauss rule plus its spectral integration matrix:
/// `cumulative[k][m] = ∫_{-1}^{x_k} ℓ_m(x) dx` with ℓ_m the Lagrange basis on
/// the nodes. Exact for polynomials of degree below the rule order.
#[derive(Debug, Clone)]
pub struct CumulativeRule {
    rule: GaussLegendre,
    cumulative: Vec<Vec<f64>>,
}

impl CumulativeRule {
    pub fn new(n: usize) -> Self {
        let rule = GaussLegendre::new(n);
        let at_nodes: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| legendre_all(n, x)).collect();
        let mut cumulative = vec![vec![0.0; n]; n];
        for k in 0..n {
            let pk = &at_nodes[k];
            let xk = rule.nodes[k];
            for m in 0..n {
                let pm = &at_nodes[m];
                let mut s = 0.5 * (xk + 1.0);
                for p in 1..n {
                    s += 0.5 * pm[p] * (pk[p + 1] - pk[p - 1]);
                }
                cumulative[k][m] = rule.weights[m] * s;
            }
        }
        CumulativeRule { rule, cumulative }
    }

    pub fn rule(&self) -> &GaussLegendre {
        &self.rule
    }
}

/// Uniform panels over [0, end] carrying one Gauss rule each.
#[derive(Debug, Clone, Copy)]
pub struct PanelGrid<'r> {
    rule: &'r CumulativeRule,
    end: f64,
    panels: usize,
}

impl<'r> PanelGrid<'r> {
    pub fn new(rule: &'r CumulativeRule, end: f64, panels: usize) -> Self {
        assert!(panels >= 1);
        PanelGrid { rule, end, panels }
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn len(&self) -> usize {
        self.panels * self.rule.rule.order()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn width(&self) -> f64 {
        self.end / self.panels as f64
    }

    /// All nodes, panel by panel.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.width();
        let mut out = Vec::with_capacity(self.len());
        for p in 0..self.panels {
            let t0 = p as f64 * h;
            for x in self.rule.rule.nodes() {
                out.push(t0 + 0.5 * h * (x + 1.0));
            }
        }
        out
    }

    /// Quadrature weights matching [`nodes`](Self::nodes).
    pub fn weights(&self) -> Vec<f64> {
        let half = 0.5 * self.width();
        let w = self.rule.rule.weights();
        (0..self.panels)
            .flat_map(|_| w.iter().map(move |wi| wi * half))
            .collect()
    }

    pub fn integrate(&self, samples: &[C64]) -> C64 {
        debug_assert_eq!(samples.len(), self.len());
        let half = 0.5 * self.width();
        let w = self.rule.rule.weights();
        let n = w.len();
        let mut total = C64::new(0.0, 0.0);
        for chunk in samples.chunks_exact(n) {
            let mut s = C64::new(0.0, 0.0);
            for (v, wi) in chunk.iter().zip(w) {
                s += v * wi;
            }
            total += s * half;
        }
        total
    }

    /// Running integral `∫_0^{t_k} f` at every node `t_k`, from samples of `f`
    /// at the same nodes.
    pub fn cumulative(&self, samples: &[C64]) -> Vec<C64> {
        debug_assert_eq!(samples.len(), self.len());
        let half = 0.5 * self.width();
        let w = self.rule.rule.weights();
        let n = w.len();
        let mut out = Vec::with_capacity(samples.len());
        let mut prefix = C64::new(0.0, 0.0);
        for chunk in samples.chunks_exact(n) {
            for row in &self.rule.cumulative {
                let mut s = C64::new(0.0, 0.0);
                for (v, c) in chunk.iter().zip(row) {
                    s += v * c;
                }
                out.push(prefix + s * half);
            }
            let mut full = C64::new(0.0, 0.0);
            for (v, wi) in chunk.iter().zip(w) {
                full += v * wi;
            }
            prefix += full * half;
        }
        out
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: C64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial uniform panels.
    pub min_panels: usize,
    pub max_depth: usize,
    pub order: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            min_panels: 1,
            max_depth: 30,
            order: 10,
        }
    }
}

/// Adaptive bisection driven by the disagreement of an `n`-point and a
/// `2n`-point Gauss rule on each interval.
///
/// On failure the best estimate is returned in `Err` together with its error
/// bound.
pub fn adaptive<F: Fn(f64) -> C64>(
    f: F,
    a: f64,
    b: f64,
    opts: &AdaptiveOptions,
) -> Result<Estimate, Estimate> {
    let low = GaussLegendre::new(opts.order);
    let high = GaussLegendre::new(2 * opts.order);
    if b == a {
        return Ok(Estimate {
            value: C64::new(0.0, 0.0),
            error: 0.0,
            intervals: 0,
        });
    }
    let span = (b - a).abs();
    let panels = opts.min_panels.max(1);
    let h = (b - a) / panels as f64;
    let mut stack: Vec<(f64, f64, usize)> = (0..panels)
        .rev()
        .map(|p| (a + p as f64 * h, a + (p + 1) as f64 * h, 0))
        .collect();

    // Two passes: first a coarse total for the relative tolerance, then the
    // actual bisection. Keeps the acceptance test independent of panel order.
    let coarse: C64 = stack.iter().map(|&(l, r, _)| high.integrate(&f, l, r)).sum();
    let target = opts.abs_tol.max(opts.rel_tol * coarse.norm());

    let mut value = C64::new(0.0, 0.0);
    let mut error = 0.0;
    let mut intervals = 0;
    let mut failed = false;
    while let Some((l, r, depth)) = stack.pop() {
        let g1 = low.integrate(&f, l, r);
        let g2 = high.integrate(&f, l, r);
        let err = (g2 - g1).norm();
        let share = target * (r - l).abs() / span;
        if err <= share || depth >= opts.max_depth {
            if err > share {
                failed = true;
            }
            value += g2;
            error += err;
            intervals += 1;
        } else {
            let m = 0.5 * (l + r);
            stack.push((m, r, depth + 1));
            stack.push((l, m, depth + 1));
        }
    }
    let est = Estimate {
        value,
        error,
        intervals,
    };
    if failed {
        Err(est)
    } else {
        Ok(est)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 10, 20] {
            let r = GaussLegendre::new(n);
            let wsum: f64 = r.weights().iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14, "n={n}");
            // x^(2n-2) on [-1,1] integrates to 2/(2n-1)
            let k = 2 * n - 2;
            let v = r.integrate(&|x: f64| C64::new(x.powi(k as i32), 0.0), -1.0, 1.0);
            assert!((v.re - 2.0 / (k as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let r = GaussLegendre::new(9);
        for w in r.nodes().windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..9 {
            assert!((r.nodes()[i] + r.nodes()[8 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn cumulative_matrix_is_exact_for_polynomials() {
        let rule = CumulativeRule::new(8);
        let grid = PanelGrid::new(&rule, 2.0, 3);
        let nodes = grid.nodes();
        let f: Vec<C64> = nodes.iter().map(|t| C64::new(3.0 * t * t, t.powi(5))).collect();
        let cum = grid.cumulative(&f);
        for (t, c) in nodes.iter().zip(&cum) {
            assert!((c.re - t.powi(3)).abs() < 1e-13);
            assert!((c.im - t.powi(6) / 6.0).abs() < 1e-13);
        }
        let total = grid.integrate(&f);
        assert!((total.re - 8.0).abs() < 1e-13);
    }

    #[test]
    fn cumulative_of_oscillation() {
        let rule = CumulativeRule::new(10);
        let grid = PanelGrid::new(&rule, 3.0, 48);
        let nodes = grid.nodes();
        let w = 7.0;
        let f: Vec<C64> = nodes.iter().map(|&t| C64::new(0.0, w * t).exp()).collect();
        let cum = grid.cumulative(&f);
        for (&t, c) in nodes.iter().zip(&cum) {
            let exact = (C64::new(0.0, w * t).exp() - 1.0) / C64::new(0.0, w);
            assert!((c - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn adaptive_converges_and_reports() {
        let f = |t: f64| C64::new(0.0, 40.0 * t).exp() * (1.0 + t);
        let opts = AdaptiveOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            ..Default::default()
        };
        let est = adaptive(f, 0.0, 2.0, &opts).unwrap();
        // ∫ (1+t) e^{iwt} dt
        let w = 40.0;
        let iw = C64::new(0.0, w);
        let prim = |t: f64| {
            let e = (iw * t).exp();
            e * (1.0 + t) / iw - e / (iw * iw)
        };
        let exact = prim(2.0) - prim(0.0);
        assert!((est.value - exact).norm() < 1e-12);
        assert!(est.intervals > 1);

        let starved = AdaptiveOptions {
            max_depth: 0,
            order: 2,
            ..opts
        };
        let err = adaptive(f, 0.0, 2.0, &starved).unwrap_err();
        assert!(err.error > 0.0);
    }
}
