//! Feature selection with the Sobolev Independence Criterion (SIC).
//!
//! SIC scores the dependence between features `X` and a response `Y` as an
//! integral probability metric between the joint law and the product of the
//! marginals, with a critic whose input gradients are pushed towards sparsity.
//! The normalized importance scores `η` (a point on the simplex over the
//! features) rank the features.
//!
//! - [`feature_map`] and [`convex_sic`]: the convex problem in a fixed random
//!   Fourier feature space, solved by alternating minimization or by block
//!   coordinate descent with mirror descent on `η`.
//! - [`critic`], [`adam`] and [`neural_sic`]: stochastic training of a neural
//!   critic with a double-backprop gradient penalty.
//! - [`hrt`] and [`knockoffs`]: false discovery rate control through the
//!   holdout randomization test and Gaussian model-X knockoffs.
//! - [`datasets`]: synthetic benchmarks and TPR/FDR metrics.

pub mod adam;
pub mod convex_sic;
pub mod critic;
pub mod datasets;
pub mod error;
pub mod feature_map;
pub mod hrt;
pub mod knockoffs;
pub mod linalg;
pub mod matrix_serde;
pub mod neural_sic;
pub mod simplex;

pub use error::{Result, SicError};
