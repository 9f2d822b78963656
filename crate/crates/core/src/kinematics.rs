//! Uniformly accelerated probe worldline in the cavity frame.
//!
//! The probe starts at rest at the left wall (`x = 0`, `t = 0`) and follows
//! `t(τ) = sinh(aτ)/a`, `x(τ) = (cosh(aτ) - 1)/a`. Everything here is
//! expressed in cavity-frame time `t`, which is also the target's proper time.
//! Below [`SERIES_THRESHOLD`] the closed forms lose precision through
//! cancellation and truncated series are used instead.

/// Accelerations below this use the series branches.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// m/s
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// m/s², the value used for "multiples of g".
pub const STANDARD_GRAVITY: f64 = 9.8;

/// One sample of the worldline at cavity time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldlinePoint {
    pub t: f64,
    pub tau: f64,
    pub x: f64,
    /// dτ/dt
    pub redshift: f64,
}

impl WorldlinePoint {
    pub fn at(a: f64, t: f64) -> Self {
        WorldlinePoint {
            t,
            tau: proper_time(a, t),
            x: position(a, t),
            redshift: redshift(a, t),
        }
    }
}

/// Probe proper time elapsed at cavity time `t`: `asinh(at)/a`.
pub fn proper_time(a: f64, t: f64) -> f64 {
    if a < SERIES_THRESHOLD {
        let z2 = (a * t) * (a * t);
        t * (1.0 - z2 / 6.0 + 3.0 * z2 * z2 / 40.0)
    } else {
        (a * t).asinh() / a
    }
}

/// Inverse of [`proper_time`]: `sinh(aτ)/a`.
pub fn coordinate_time(a: f64, tau: f64) -> f64 {
    if a < SERIES_THRESHOLD {
        let z2 = (a * tau) * (a * tau);
        tau * (1.0 + z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        (a * tau).sinh() / a
    }
}

/// Probe position at cavity time `t`: `(sqrt(1 + a²t²) - 1)/a`.
pub fn position(a: f64, t: f64) -> f64 {
    if a < SERIES_THRESHOLD {
        let z2 = (a * t) * (a * t);
        0.5 * a * t * t * (1.0 - z2 / 4.0 + z2 * z2 / 8.0)
    } else {
        // same expression, rationalised so small `at` does not cancel
        a * t * t / ((1.0 + (a * t) * (a * t)).sqrt() + 1.0)
    }
}

/// Probe velocity dx/dt.
pub fn velocity(a: f64, t: f64) -> f64 {
    a * t / (1.0 + (a * t) * (a * t)).sqrt()
}

/// dτ/dt = 1/sqrt(1 + a²t²).
pub fn redshift(a: f64, t: f64) -> f64 {
    1.0 / (1.0 + (a * t) * (a * t)).sqrt()
}

/// Cavity time at which a probe starting at rest reaches `x = length`:
/// `sqrt(aL (aL + 2))/a`, tending to the Newtonian `sqrt(2L/a)` as `a → 0`.
///
/// Returns `+inf` for `a == 0`.
pub fn crossing_time(a: f64, length: f64) -> f64 {
    if a <= 0.0 {
        return f64::INFINITY;
    }
    let eps = a * length;
    if a < SERIES_THRESHOLD {
        (2.0 * length / a).sqrt() * (1.0 + eps / 4.0 - eps * eps / 32.0)
    } else {
        (eps * (eps + 2.0)).sqrt() / a
    }
}

/// Probe proper time at the same event: `acosh(aL + 1)/a`.
pub fn crossing_proper_time(a: f64, length: f64) -> f64 {
    if a <= 0.0 {
        return f64::INFINITY;
    }
    let eps = a * length;
    if a < SERIES_THRESHOLD {
        (2.0 * length / a).sqrt() * (1.0 - eps / 12.0 + 3.0 * eps * eps / 160.0)
    } else {
        // acosh(1 + ε) without forming 1 + ε
        (eps + (eps * (2.0 + eps)).sqrt()).ln_1p() / a
    }
}

/// Dimensionful acceleration for a given gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiAcceleration {
    pub meters_per_second_squared: f64,
    pub multiples_of_g: f64,
}

/// Converts a dimensionless acceleration (gap units) to SI: `ã = a Ω c / π`.
pub fn si_acceleration(a: f64, omega: f64) -> SiAcceleration {
    let ms2 = a * omega * SPEED_OF_LIGHT / std::f64::consts::PI;
    SiAcceleration {
        meters_per_second_squared: ms2,
        multiples_of_g: ms2 / STANDARD_GRAVITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn proper_time_examples() {
        assert_eq!(proper_time(1.0, 0.0), 0.0);
        assert!((proper_time(1.0, 1f64.sinh()) - 1.0).abs() < 1e-15);
        assert_eq!(proper_time(0.0, 2.5), 2.5);
    }

    #[test]
    fn position_examples() {
        assert_eq!(position(1.0, 0.0), 0.0);
        assert!((position(1.0, 1f64.sinh()) - (1f64.cosh() - 1.0)).abs() < 1e-15);
        assert!((position(0.5, 1.0) - 0.236_067_977_499_789_7).abs() < 1e-15);
        assert_eq!(position(0.0, 3.0), 0.0);
    }

    #[test]
    fn position_matches_integrated_velocity() {
        // composite Simpson on dx/dt
        let (a, t) = (0.5, 1.0);
        let n = 2000;
        let h = t / n as f64;
        let mut s = velocity(a, 0.0) + velocity(a, t);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * velocity(a, k as f64 * h);
        }
        let x = s * h / 3.0;
        assert!((x - position(a, t)).abs() < 1e-12);
    }

    #[test]
    fn crossing_time_examples() {
        let l = 1f64.cosh() - 1.0;
        assert!((crossing_proper_time(1.0, l) - 1.0).abs() < 1e-14);
        assert!(rel(crossing_time(1.0, l), 1f64.sinh()) < 1e-14);
        // oracle: bisection on position(a, T) = L
        let (a, l) = (2.3, 1.0);
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if position(a, mid) < l {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((crossing_time(a, l) - lo).abs() < 1e-12);
        assert!((crossing_proper_time(a, l) - 3.3f64.acosh() / 2.3).abs() < 1e-14);
        assert!((crossing_proper_time(a, l) - proper_time(a, lo)).abs() < 1e-12);
        assert!((crossing_proper_time(a, l) - 0.8101).abs() < 1e-4);
        let newton = (2.0 * 0.5 / 1e-8f64).sqrt();
        assert!(rel(crossing_time(1e-8, 0.5), newton) < 1e-6);
        assert!(rel(crossing_proper_time(1e-8, 0.5), newton) < 1e-6);
    }

    #[test]
    fn branch_continuity() {
        let below = SERIES_THRESHOLD * (1.0 - 1e-12);
        let above = SERIES_THRESHOLD;
        for &t in &[0.1, 1.0, 5.0, 10.0] {
            assert!((proper_time(below, t) - proper_time(above, t)).abs() < 1e-10);
            assert!((position(below, t) - position(above, t)).abs() < 1e-10);
        }
        for &l in &[0.1, 1.0, 3.0] {
            let (a, b) = (crossing_time(below, l), crossing_time(above, l));
            assert!(rel(a, b) < 1e-10);
            let (a, b) = (crossing_proper_time(below, l), crossing_proper_time(above, l));
            assert!(rel(a, b) < 1e-10);
        }
    }

    #[test]
    fn si_conversion() {
        let g = si_acceleration(1.0, 1e9).multiples_of_g;
        assert!((g - 9.74e15).abs() / 9.74e15 < 1e-3);
        assert!((g - 1e16).abs() / 1e16 < 0.05);
        assert_eq!(si_acceleration(0.0, 3e9).multiples_of_g, 0.0);
        let g6 = si_acceleration(1.0, 1e6).multiples_of_g;
        assert!(rel(g6 * 1e3, g) < 1e-14);
    }

    #[test]
    fn origin() {
        let p = WorldlinePoint::at(1.7, 0.0);
        assert_eq!((p.tau, p.x, p.redshift), (0.0, 0.0, 1.0));
    }

    proptest! {
        #[test]
        fn round_trip(a in 0.0f64..5.0, t in 0.0f64..10.0) {
            let back = coordinate_time(a, proper_time(a, t));
            prop_assert!((back - t).abs() <= 1e-12 * t.max(1e-300) + 1e-300);
        }

        #[test]
        fn monotone_in_t(a in 1e-3f64..5.0, t in 0.0f64..10.0, dt in 1e-6f64..1.0) {
            prop_assert!(proper_time(a, t + dt) > proper_time(a, t));
            prop_assert!(position(a, t + dt) > position(a, t));
        }

        #[test]
        fn redshift_integrates_to_proper_time(a in 0.0f64..5.0, t in 0.01f64..10.0) {
            // 20-point Gauss-Legendre over 64 panels
            let rule = crate::quadrature::GaussLegendre::new(20);
            let panels = 64;
            let h = t / panels as f64;
            let mut s = 0.0;
            for p in 0..panels {
                let t0 = p as f64 * h;
                for (x, w) in rule.nodes().iter().zip(rule.weights()) {
                    s += 0.5 * h * w * redshift(a, t0 + 0.5 * h * (x + 1.0));
                }
            }
            prop_assert!((s - proper_time(a, t)).abs() < 1e-12 * t);
        }
    }
}
