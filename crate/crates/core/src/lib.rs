//! Rough-path lifts of fractional Brownian motion, differential equations
//! driven by them, kernel-mollified bridge conditioning and small-noise
//! rate-function computation.
//!
//! The algebraic and pathwise layers ([`tensor_algebra`], [`path_spaces`],
//! [`lift`], [`solvers`]) are generic over the floating-point type through
//! [`Scalar`]. The probabilistic layers ([`gaussian`], [`bridge`], [`ldp`])
//! work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bridge;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod ldp;
pub mod lift;
pub mod path_spaces;
pub mod rng;
pub mod scalar;
pub mod solvers;
pub mod stats;
pub mod tensor_algebra;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Truncated group element with `f64` entries.
pub type GroupTensor = tensor_algebra::GroupTensor<f64>;
/// Truncated group element with `f32` entries.
pub type GroupTensorF32 = tensor_algebra::GroupTensor<f32>;
/// Truncated Lie element with `f64` entries.
pub type LieElement = tensor_algebra::LieElement<f64>;
/// Grid path with `f64` values.
pub type GridPath = path_spaces::GridPath<f64>;
/// Grid path with `f32` values.
pub type GridPathF32 = path_spaces::GridPath<f32>;
/// Rough path on a dyadic grid with `f64` entries.
pub type RoughPathGrid = path_spaces::RoughPathGrid<f64>;
/// Rough path on a dyadic grid with `f32` entries.
pub type RoughPathGridF32 = path_spaces::RoughPathGrid<f32>;
/// Vector-field system over `f64` states.
pub type VectorFieldSystem = solvers::VectorFieldSystem<f64>;
/// Solution of a driven equation with `f64` states.
pub type SolutionPath = solvers::SolutionPath<f64>;
/// Lift record with an `f64` rough path.
pub type LiftRecord = lift::LiftRecord<f64>;
