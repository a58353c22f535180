//! Numerical toolkit for spectral-gap criteria on generalized Orlicz balls
//! `K_E = { x : sum_i V_i(x_i) <= E }` with convex one-dimensional
//! potentials `V_i` (no symmetry assumed).
//!
//! The crate computes the explicitly checkable criterion quantities (the
//! coefficient aggregates `A2` and `AInf2`, the normalization spread `M`,
//! the distinguished level and the good-level interval), provides samplers
//! for the uniform, cone, radial and annulus measures attached to `K_E`,
//! estimates spectral constants, and runs verification suites for the
//! inequalities the construction rests on.

pub mod check;
pub mod concentration;
pub mod config;
pub mod conv;
pub mod error;
pub mod geometry;
pub mod potential;
pub mod profile;
pub mod quad;
pub mod report;
pub mod special;
pub mod spectral;

pub use check::{CheckRow, CheckStatus};
pub use error::{Error, Result};
pub use potential::{normalize_1d, NormalizedPotential, ProductPotential, RawPotential, Side};
pub use profile::{build_profile, GriddedDensity, GridSpec, LevelInterval, LevelProfile};
