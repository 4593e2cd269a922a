//! Continuous-strength editing for Rectified Flow, checked against analytic fields.
//!
//! The editing update of an inversion-free prompt-pair editor is split into a
//! *fidelity* term (same condition, different states) and a *steering* term
//! (same state, different conditions). Scaling only the steering term turns
//! the editor into a slider. This crate implements the split and its
//! baselines on Gaussian-mixture velocity fields whose exact velocity is known
//! in closed form, so every identity can be checked numerically.
//!
//! Module map:
//!
//! - [`vector`], [`grid`], [`rng`]: states, velocities, time grids, seeded noise.
//! - [`gmm`], [`field`]: mixture velocity fields, guidance, tabulated fields.
//! - [`sampler`]: Euler generation.
//! - [`editor`]: the editing loop and its variants.
//! - [`geometry`]: angles and projections between the two terms.
//! - [`metrics`]: slider and preservation metrics.
//! - [`bench`]: scenarios, sweeps and reports.

pub mod bench;
pub mod editor;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gmm;
pub mod grid;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod vector;

pub use editor::{run_edit, EditConfig, EditResult, InitMode, Variant};
pub use error::{Error, Result};
pub use field::{AnalyticField, CfgField, Condition, TabulatedField, VelocityField};
pub use gmm::{Component, Covariance, GaussianMixtureModel};
pub use grid::TimeGrid;
pub use rng::Seed;
pub use vector::{State, Velocity};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/velocity-fields.md")]
    mod velocity_fields {}
    #[doc = include_str!("../../../book/src/editing.md")]
    mod editing {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
