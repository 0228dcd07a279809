//! One-step MAML on mixed linear regression.
//!
//! Closed-form average test loss in the over- and underparameterized regimes
//! and for general input covariances, a seeded Monte Carlo simulator that
//! serves as the ground truth, and a batch front end for learning-rate sweeps.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod rng;
pub mod search;
pub mod simulator;
pub mod theory_general;
pub mod theory_iso;

pub use error::{Error, Result};
pub use model::{CovarianceSpec, GeneralCovariance, HyperParams, Regime};
