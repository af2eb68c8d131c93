//! Linear predictive state representations (PSRs) at desk scale.
//!
//! The crate is organized around three layers:
//!
//! * [`psr`] and [`policy`] hold the observable-operator model itself: tests,
//!   core test sets, operator matrices, trajectory probabilities, exact
//!   planning and validation.
//! * [`pomdp`], [`lift`], and [`env`] hold latent-state ground truth: an exact
//!   POMDP probability oracle, liftings from POMDPs to PSR parameterizations,
//!   structural diagnostics (PSR rank, weakly-revealing singular values,
//!   regularity), and seeded generators including the combinatorial-lock
//!   hard instance.
//! * [`crane`] and [`experiment`] implement the optimistic-MLE online learner
//!   and the multi-seed experiment harness around it.
//!
//! Everything is exact enumeration over small finite alphabets; a global
//! enumeration budget ([`budget`]) guards against accidental blowup.

pub mod budget;
pub mod crane;
pub mod env;
pub mod error;
pub mod experiment;
pub mod lift;
pub mod linalg;
pub mod policy;
pub mod pomdp;
pub mod psr;

pub use crane::{ConfidenceSet, CraneOptions, Dataset, ModelClass, RegretTrace};
pub use env::{Environment, GeneratorSpec};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, SummaryReport};
pub use lift::{CoreMatrix, LiftReport, SystemDynamicsMatrix};
pub use policy::Policy;
pub use pomdp::Pomdp;
pub use psr::{CoreTestSet, PsrModel, Test, Trajectory, ValidationReport};

/// Normalizer threshold below which a history is declared unreachable.
pub const REACH_TOL: f64 = 1e-12;
/// Trajectory probabilities in (-PROB_TOL, 0) are rounding noise and clamp
/// to zero; anything below -PROB_TOL signals invalid parameters.
pub const PROB_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for numerical rank and pseudoinverses.
pub const SVD_TOL: f64 = 1e-8;
/// Floor applied inside log-likelihoods so zero-probability events under a
/// candidate model stay finite (and effectively exclude the candidate).
pub const PROB_FLOOR: f64 = 1e-300;
