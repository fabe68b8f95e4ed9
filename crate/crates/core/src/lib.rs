//! Numerics for degenerate Kolmogorov operators
//!
//! ```text
//! L u = Σ_{i,j ≤ m₀} ∂_{x_i}(a_ij ∂_{x_j} u) + Σ_{i ≤ m₀} ∂_{x_i}(a_i u) + c u + ⟨Bx, ∇u⟩ + ∂_t u
//! ```
//!
//! on `ℝ × ℝ^d`: the homogeneous group structure induced by `B`, the explicit Gaussian
//! kernel of the constant-coefficient principal part, exact and Euler–Maruyama sampling of
//! the associated diffusion, a finite-difference solver for variable coefficients, and
//! fitted-constant checks of on- and off-diagonal kernel bounds.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeff;
pub mod fdsolver;
pub mod grid;
pub mod group;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod scaling;
pub mod simulate;
pub mod verify;

pub use coeff::{check_assumptions, CoefficientField, Coefficients, OperatorSpec, ValidationBox};
pub use fdsolver::{estimate_fundamental_solution, moser_check, solve_backward, FdGrid};
pub use grid::{Axis, GridSolution, SpatialGrid};
pub use group::{
    group_compose, group_inverse, homogeneous_dimension, validate_blocks, BlockStructure, Cylinder,
    CylinderKind, DilationFamily, DriftMatrix, GroupElement,
};
pub use kernel::{solve_cauchy, GaussianKernel};
pub use scaling::{scale_operator, translate_operator};
pub use simulate::{euler_maruyama, sample_exact, SampleBatch};
pub use verify::{TransitionDensity, VerificationReport};
