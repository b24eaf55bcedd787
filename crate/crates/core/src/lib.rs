//! Deterministic simulator and analysis toolkit for online federated averaging
//! under a stochastically extended adversary.
//!
//! Each client plays a local decision, observes a sample from a distribution
//! picked by an oblivious adversary, takes a projected SGD step and, every
//! `τ` steps, averages its model with the other clients. The crate runs that
//! algorithm deterministically ([`engine`]), computes the analysis-side
//! quantities a learner never observes ([`oracles`]), evaluates the regret
//! bounds and lemma inequalities on the simulated trajectories ([`bounds`]),
//! and drives experiments, sweeps and scaling fits ([`harness`]).

pub mod acceptance;
pub mod adversary;
pub mod bounds;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod losses;
pub mod oracles;
pub mod rng;
pub mod step_size;
pub mod vector;

pub use adversary::{AdversarySchedule, AdversarySpec, Moments, VarianceLevels};
pub use config::{Domain, ExperimentConfig, ProjectionRadius};
pub use error::{FedSeaError, Result};
pub use losses::{LossModel, LossSpec, Sample};
pub use rng::{DistParams, Purpose, StreamKey};
pub use step_size::{resolve_step_sizes, ModelConstants, StepSizePolicy};
pub use vector::Vector;
