//! Numerical laboratory for time-independent information-theoretic
//! generalization bounds of stochastic gradient Langevin dynamics.
//!
//! The crate provides loss families with certified smoothness and
//! dissipativity constants, a seeded SGLD engine, the explicit constant chains
//! behind the bounds, Monte Carlo estimators, an exact Gaussian oracle for the
//! quadratic case and a one-dimensional Fokker-Planck solver.

pub mod bounds;
pub mod data;
pub mod error;
pub mod estimators;
pub mod fokker_planck;
pub mod loss;
pub mod oracle;
pub mod rng;
pub mod sgld;
pub mod stats;
pub mod vecops;

pub use bounds::{BoundOptions, BoundReport, DerivedConstants, LsiMode};
pub use data::{DataDistribution, Dataset, Labels, Sample, UniformBall};
pub use error::{LabError, Result};
pub use loss::{
    certify, CertificationReport, CosineRidgeLoss, LogisticRidgeLoss, LossConstants, LossModel, QuadraticLoss,
};
pub use sgld::{run_chain, run_ensemble, ChainTrace, Ensemble, SgldConfig};
pub use stats::EstimateWithError;
