//! Multi-output extreme spatial modeling.
//!
//! Block maxima observed at a set of design points in a control space are
//! modeled marginally by GEV distributions whose parameters are smoothed
//! over the control space, and jointly by a Brown-Resnick max-stable process
//! over a metric space of critical points. The dependence parameter is fitted
//! by maximizing a pairwise composite likelihood restricted to a graph of
//! nearby cliques.
//!
//! Module map:
//!
//! - [`gev`]: univariate GEV machinery, block maxima, maximum likelihood.
//! - [`marginal`]: Gaussian-process parameter surfaces over the control space.
//! - [`space`]: critical-point metric space and clique graph generation.
//! - [`brownresnick`]: exponent measure, pairwise density, exact simulation.
//! - [`dependence`]: empirical χ, F-madogram, input-invariance diagnostics.
//! - [`likelihood`]: truncated composite likelihood and the τ fit.
//! - [`pipeline`]: end-to-end fit, sampling, return levels, exceedances.
//! - [`baselines`] and [`metrics`]: comparison models and evaluation.
//! - [`synth`]: Latin hypercube designs and synthetic ground-truth generators.
//! - [`io`]: on-disk CSV and JSON formats.

pub mod baselines;
pub mod brownresnick;
pub mod data;
pub mod dependence;
pub mod error;
pub mod gev;
pub mod io;
pub mod likelihood;
pub mod marginal;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod space;
pub mod special;
pub mod synth;

pub use error::{MesmError, Result};
