//! Numerical toolkit for Laguerre function expansions of Hermite type on the
//! positive orthant: special functions, quadrature, spectral calculus of the
//! operator `L = -Δ + |x|² + Σ (α_i² - 1/4)/x_i²`, heat and Poisson kernels,
//! homogeneous Besov and Triebel–Lizorkin norms, and molecular decompositions
//! over dyadic cubes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod dyadic;
pub mod error;
pub mod kernels;
pub mod molecular;
pub mod numerics;
pub mod report;
pub mod schwartz;
pub mod spaces;
pub mod spectral;
pub mod specfun;
pub mod verify;

pub use error::{Error, Result};
pub use specfun::{AlphaIndex, MultiIndex, ValidityClass};
pub use numerics::{QuadGrid, TGrid};
pub use spectral::{CoeffField, SpaceParams};
pub use dyadic::{CubeSet, DyadicCube};
pub use report::{to_json, Check};
pub use verify::{Suite, SuiteReport, VerifyConfig};
