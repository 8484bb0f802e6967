//! Directional-coderivative criteria for the Aubin property of solution maps
//!
//! ```text
//! S(p) = { x | 0 ∈ H(p,x) + N̂_Γ(x) },   Γ = g⁻¹(D)
//! ```
//!
//! where `H` and `g` are polynomial and `D` is a nonpositive orthant, a cone
//! given by halfspaces, or a product of Lorentz (second-order) cones.
//!
//! The pipeline is: [`exprs`] parses and differentiates the data, [`chain`]
//! recovers the multiplier and reduces the constraint locally to a simpler
//! cone, [`avi`] enumerates the critical directions, and [`verify`] checks the
//! adjoint implication along every critical direction. [`probe`] offers purely
//! numerical cross-checks that never feed the verdict.
//!
//! ```
//! use aubin_core::{fixtures, verify::{verify_aubin, Verdict, VerifyOptions}};
//!
//! let report = verify_aubin(&fixtures::example1(), &VerifyOptions::default()).unwrap();
//! assert!(matches!(report.verdict, Verdict::AubinVerified));
//! ```

pub mod avi;
pub mod chain;
pub mod cones;
pub mod exprs;
pub mod fixtures;
pub mod json;
pub mod linalg;
pub mod lorentz;
pub mod lp;
pub mod par;
pub mod probe;
pub mod verify;

pub use exprs::{ProblemError, ProblemFile, ProblemSpec, ReferenceData};
pub use par::Execution;

/// Numerical tolerances shared by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// `|zᵢ| ≤ activity` classifies a constraint as active.
    pub activity: f64,
    /// Singular values below this (relative to the largest) count as zero.
    pub rank: f64,
    /// Residual accepted for linear systems.
    pub residual: f64,
    /// Objective threshold for LP-based feasibility decisions.
    pub lp: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            activity: 1e-9,
            rank: 1e-10,
            residual: 1e-9,
            lp: 1e-7,
        }
    }
}
