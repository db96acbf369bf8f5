//! Variational toolkit for the pure-traction problem of elasticity.
//!
//! The crate covers the whole chain from loads to energies on a 2D domain:
//!
//! - [`algebra`]: small dense matrices, skew parametrizations, the
//!   Euler–Rodrigues exponential and the Green–St.Venant densities.
//! - [`mesh`]: P1 triangulations with tagged boundary edges and a text format.
//! - [`loads`]: traction/body-force specifications, the load functional, the
//!   moment matrix and the compatibility classification.
//! - [`fem`]: linear-elastic pure-traction solves with rigid-mode projection.
//! - [`limit`]: the limit functional, its inner skew minimization and
//!   alternating minimization.
//! - [`nonlinear`]: rescaled nonlinear energies, L-BFGS minimization and the
//!   h-sweep experiment.
//!
//! Element loops run on rayon when the `parallel` feature is enabled (the
//! default). Reductions are always performed sequentially in element order,
//! so parallel and sequential runs produce bit-identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algebra;
pub mod error;
pub mod fem;
pub mod limit;
pub mod loads;
pub mod mesh;
pub mod nonlinear;
pub mod par;

pub use algebra::{Density, Mat, SkewParam, SymMat};
pub use error::{Error, Result};
pub use fem::{DisplacementField, LinearProblem, LinearSolution};
pub use loads::{BodyForce, Classification, Compatibility, LoadAssembly, LoadSpec, Traction};
pub use mesh::{Mesh, MeshError, TagScheme};
pub use par::Exec;
