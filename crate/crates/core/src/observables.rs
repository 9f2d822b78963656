//! Bloch vector, rotation angles and purity of a qubit state.
//!
//! `ρ = (I + r·σ)/2` in the `(|e⟩, |g⟩)` basis, so `r_z = ρ_ee - ρ_gg`,
//! `r_x = 2 Re ρ_eg`, `r_y = -2 Im ρ_eg`. The polar angle is taken from the
//! normalised vector so that loss of purity is not read as a rotation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::QubitDensity;

/// Below this length a direction (or azimuth) is undefined.
pub const UNDEFINED_BELOW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochRecord {
    pub r: [f64; 3],
    pub norm: f64,
    /// `None` when `|r|` is below [`UNDEFINED_BELOW`].
    pub theta: Option<f64>,
    /// `None` when the transverse part of `r` is below [`UNDEFINED_BELOW`].
    pub phi: Option<f64>,
    pub purity: f64,
    pub min_eigenvalue: f64,
}

pub fn bloch_vector(rho: &QubitDensity) -> [f64; 3] {
    let m = rho.matrix();
    let eg = m[(0, 1)];
    [2.0 * eg.re, -2.0 * eg.im, m[(0, 0)].re - m[(1, 1)].re]
}

pub fn bloch(rho: &QubitDensity) -> BlochRecord {
    let r = bloch_vector(rho);
    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let transverse = r[0].hypot(r[1]);
    let theta = (norm >= UNDEFINED_BELOW).then(|| (r[2] / norm).clamp(-1.0, 1.0).acos());
    let phi = (transverse >= UNDEFINED_BELOW).then(|| r[1].atan2(r[0]));
    BlochRecord {
        r,
        norm,
        theta,
        phi,
        purity: purity(rho),
        min_eigenvalue: rho.eigenvalues()[0],
    }
}

/// `Tr ρ²`
pub fn purity(rho: &QubitDensity) -> f64 {
    rho.matrix().iter().map(|z| z.norm_sqr()).sum()
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Changes in polar and azimuthal angle; either is `None` when undefined
/// for one of the states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleChange {
    pub d_theta: Option<f64>,
    pub d_phi: Option<f64>,
}

pub fn angle_change(initial: &QubitDensity, fin: &QubitDensity) -> AngleChange {
    let (i, f) = (bloch(initial), bloch(fin));
    AngleChange {
        d_theta: i.theta.zip(f.theta).map(|(a, b)| b - a),
        d_phi: i.phi.zip(f.phi).map(|(a, b)| wrap(b - a)),
    }
}

/// `(Δθ, Δφ)`, failing if either angle is undefined.
pub fn delta_angles(initial: &QubitDensity, fin: &QubitDensity) -> Result<(f64, f64)> {
    let c = angle_change(initial, fin);
    let dt = c.d_theta.ok_or(Error::UndefinedAngle("theta"))?;
    let dp = c.d_phi.ok_or(Error::UndefinedAngle("phi"))?;
    Ok((dt, dp))
}
