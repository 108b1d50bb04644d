//! Classical and Bohmian dynamics on the shape space of N particles.

// Negated comparisons are how NaN inputs get rejected alongside out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bohm;
pub mod bundle;
pub mod classical;
pub mod error;
pub mod fd;
pub mod kinematics;
pub mod linalg;
pub mod paths;
pub mod quantum;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod stats;
pub mod subsystems;
pub mod suites;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Configuration = kinematics::MassedConfiguration<f64>;
pub type Tangent = kinematics::TangentVector<f64>;
pub type Similarity = kinematics::SimilarityTransform<f64>;
pub type Model = kinematics::ConformalModel<f64>;
