//! Neural bivariate copula estimation.
//!
//! The central object is a copula hypothesis `H(u, v)` built from a
//! strictly positive MLP: cumulative trapezoid integrals of the network
//! turn each input into a monotone transform of the unit interval, a logit
//! link maps those transforms onto the real line, and a bivariate CDF head
//! (Gaussian or logistic) combines them. By construction `H` maps the unit
//! square into the unit interval with a nonnegative mixed second
//! derivative, so its density is a valid pseudo-likelihood. The remaining
//! copula requirement, uniform marginals, is encouraged by a barrier-scheduled
//! constraint on the boundary values and boundary derivatives.
//!
//! Modules:
//!
//! - [`copula_ref`]: closed-form Gaussian/Clayton/Frank copulas used for
//!   synthetic data and for validating estimators.
//! - [`empirical`]: pseudo-observations, bivariate ECDF, Gaussian KDE with
//!   Silverman bandwidth, and a prefix-KDE estimator of copula first
//!   derivatives.
//! - [`diff_engine`]: second-order forward jets in the two inputs, a
//!   reverse-mode tape for parameter gradients, and the flat parameter
//!   vector layout.
//! - [`model`]: the copula hypothesis itself plus the bivariate normal CDF,
//!   the flexible-logistic head, a FLEX variant, mixtures, and serialization.
//! - [`training`]: Sobolev loss assembly, boundary constraints, and
//!   barrier-scheduled Adam training with early stopping.
//! - [`sampling`]: conditional inverse-transform sampling from a trained model.
//! - [`eval`]: likelihood reports with KDE marginals, bootstrap intervals,
//!   marginal-deviation reports, min-max scaling, and the ablation grid.
//! - [`cli`]: the command-line surface over all of the above.

pub mod cli;
pub mod copula_ref;
pub mod diff_engine;
pub mod empirical;
pub mod error;
pub mod eval;
pub mod model;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
