//! Recovering the planted rank-one component of an asymmetric spiked tensor
//! from a stream of noisy samples, using memory proportional to `d²`.
//!
//! The estimator never forms the order-`k̄` tensor. It pairs the modes into
//! matrix blocks (plus one vector block when `k̄` is odd) and runs normalized
//! stochastic gradient ascent on one block at a time, each step using one
//! fresh sample. A run has three phases:
//!
//! 1. a staged warm-up from every sign pattern of a structured initialization,
//! 2. a constant-step refinement,
//! 3. after picking the best pattern on fresh samples, a decaying-step
//!    refinement that drives the error down at the optimal rate,
//!
//! and ends with a top-eigenvector extraction per block.
//!
//! ```
//! use tensorspike::prelude::*;
//!
//! let spec = InstanceSpec {
//!     order: 4,
//!     dims: vec![4, 4, 4, 4],
//!     snr: 2.0,
//!     spike_mode: SpikeMode::Symmetric,
//!     seed: 1,
//!     spikes: None,
//! };
//! let mut config = RunConfig::new(
//!     spec,
//!     NoiseConfig::zero(),
//!     ScheduleSpec::new(ScheduleChoice::Oracle, 500),
//!     7,
//! );
//! config.early_exit = true;
//! let out = run_mpsnsga(&config).unwrap();
//! assert!(out.report.loss.max_loss < 1e-6);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod layout;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod resources;
pub mod schedule;
pub mod search;
pub mod seeding;
pub mod sga;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

/// Version tag written at the top of every CSV and into reports.
pub const FORMAT_TAG: &str = "tensorspike-v1";

/// The types most programs need.
pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::layout::{BlockLayout, Parity};
    pub use crate::model::{correlation, make_instance, recovery_loss, InstanceSpec, SignalInstance, SpikeMode};
    pub use crate::noise::{Backend, NoiseConfig, NoiseKind, RewardOracle};
    pub use crate::pipeline::{run_mpsnsga, RunConfig, RunOutput, RunReport, ScheduleChoice, ScheduleSpec};
    pub use crate::schedule::{adaptive_schedule, oracle_schedule, AdaptiveCase, Constants, PhaseSchedule};
    pub use crate::search::reference_search;
    pub use crate::sga::{BlockState, RewardSign, StepPlan, StreamContext};
}
