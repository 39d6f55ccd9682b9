//! Jenss-Bayley latent change score models with individually varying
//! measurement occasions.
//!
//! The crate covers the whole workflow:
//!
//! - [`model`]: the Jenss-Bayley curve, individual loading matrices and
//!   model-implied moments for every model variant;
//! - [`estimation`]: full-information maximum likelihood fitting, standard
//!   errors, fit indices and improper-solution diagnostics;
//! - [`scores`]: mean growth-rate curves and regression factor scores for
//!   growth factors, latent true scores and latent rates;
//! - [`simulation`]: the Monte Carlo design, replication driver and
//!   performance metrics;
//! - [`io`]: wide CSV ingestion, report writers and the command layer behind
//!   the `jblcsm` binary.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod scores;
pub mod simulation;

pub use error::{Error, Result};
pub use estimation::{Dataset, FitConfig, FitResult, Individual};
pub use model::{Acceleration, Expression, Framework, GrowthFactors, ModelSpec, PopulationParams, Schedule};
