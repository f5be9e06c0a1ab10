//! Stochastic volatility models with a nonparametric conditional return
//! distribution, fitted by penalized maximum likelihood.
//!
//! The latent AR(1) log-volatility is discretized on a fine grid so the
//! likelihood becomes an HMM-style matrix product evaluated by the forward
//! algorithm. The innovation density is either normal (`Sv0`), Student-t
//! (`SvT`) or a penalized mixture of standardized B-splines (`SvSp`).

pub mod cli;
pub mod cv;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod hmm;
pub mod models;
pub mod optim;
pub mod series;
pub mod simulation;
pub mod spline;

pub use error::{Result, SvError};
pub use grid::{build_grid, DiscreteStateModel, VolatilityGrid};
pub use models::{ModelKind, ModelParams};
pub use spline::{PenaltyConfig, SplineBasis, SplineDensity};
