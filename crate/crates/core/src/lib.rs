//! Remote control of a stationary cavity qubit through the motion of a
//! uniformly accelerated probe atom.
//!
//! Both atoms are Unruh-DeWitt detectors coupled to a massless scalar field
//! in a one-dimensional Dirichlet cavity. The target's reduced state is
//! computed to second order in the couplings from a symbolically generated
//! Dyson expansion, with the time integrals evaluated by panel Gauss
//! quadrature. A truncated-Fock exact propagator serves as an end-to-end
//! check of the perturbative pipeline.
//!
//! Module map:
//!
//! * [`model`]: configuration schema, validation, qubit states.
//! * [`kinematics`]: probe worldline, redshift, crossing time, SI units.
//! * [`quadrature`]: Gauss-Legendre panels and cumulative integration.
//! * [`amplitudes`]: first- and second-order time integrals.
//! * [`dyson`]: operator-term generation, expectations, reduced state.
//! * [`observables`]: Bloch vector, rotation angles, purity.
//! * [`oracle`]: exact truncated-space evolution.
//! * [`sweep`]: (a, T) and target-state grids, maximisation.
//! * [`fixtures`]: printed-term fixtures checked against generated terms.
//! * [`output`]: CSV formatting shared by the CLI and tests.

pub mod amplitudes;
pub mod dyson;
pub mod error;
pub mod fixtures;
pub mod kinematics;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod output;
pub mod quadrature;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{
    Detector, ProbePrep, QubitDensity, SimulationConfig, ValidatedConfig,
};
pub use num_complex::Complex64 as C64;
