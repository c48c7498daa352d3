//! Isotropic realizability of gradient fields.
//!
//! Given a potential `u` with non-vanishing gradient, the crate builds a
//! positive conductivity `σ` with `div(σ∇u) = 0`, either along the gradient
//! flow of `u` or cell by cell on piecewise potentials, and checks the result
//! against the weak form.
//!
//! ```
//! use isoreal::{reconstruct_sigma, Field, FlowOptions};
//!
//! // in one dimension σ u′ is constant: σ = 1 / (1 + x²)
//! let u = Field::parse("x + x^3/3", 1).unwrap();
//! let s = reconstruct_sigma(&u, &[0.5], &FlowOptions::default()).unwrap();
//! assert!((s - 1.0 / 1.25).abs() < 1e-7);
//! ```
//!
//! Numerical code is generic over the float type; cone fans also run on
//! exact rationals.

pub mod expr;
pub mod fans;
pub mod field;
pub mod flow;
pub mod geom;
pub mod grid;
pub mod piecewise;
pub mod quadrature;
pub mod reconstruct;
pub mod scalar;
pub mod verify;

use num_rational::Rational64;
use thiserror::Error;

pub use expr::{Expr, ParseError};
pub use fans::{
    fan_propagation_oracle, fan_sigma_closed_form, separated_sigma, ConeFan, FanError, FanField,
    FanPiece, FanSigma, FanViolation, SeparatedError, SeparatedPotential, SplitFan,
};
pub use field::{
    check_gradient_bound, BoundError, DerivativeMode, Eval, FieldError, GradientBound,
    MollifierSpec, PotentialField, SamplingPlan,
};
pub use flow::{
    estimate_flow_density, flow_map, hit_time, integrate_flow, semigroup_defect,
    trajectory_to_level_set, DensityEstimate, FlowError, FlowOptions, Trajectory,
};
pub use geom::Aabb;
pub use piecewise::{
    build_piecewise_sigma, check_admissible, classify_face, flux_match_value, Cell, CellMap,
    ChainPlan, Decomposition, FaceClass, PiecewiseSigma, ViolationReport,
};
pub use reconstruct::{
    flow_relation_residual, read_sigma_table, reconstruct_on_grid, reconstruct_sigma,
    ConductivityField, GridReconstruction, ReconstructError,
};
pub use scalar::{Real, Scalar};
pub use verify::{weak_residual, Bump, TestFunctionSet, WeakResidualReport, TOL_WEAK};

/// Double-precision potential.
pub type Field = PotentialField<f64>;
/// Double-precision conductivity.
pub type Sigma = ConductivityField<f64>;
/// Floating-point cone fan.
pub type Fan = ConeFan<f64>;
/// Cone fan in exact rational arithmetic.
pub type ExactFan = ConeFan<Rational64>;
/// Double-precision decomposition.
pub type Cells = Decomposition<f64>;

/// Any error raised by the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    Separated(#[from] SeparatedError),
    #[error(transparent)]
    Topology(#[from] piecewise::TopologyError),
    #[error(transparent)]
    Admissibility(#[from] ViolationReport),
    #[error(transparent)]
    Build(#[from] piecewise::BuildError),
}
