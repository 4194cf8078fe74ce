//! Discrete-time simulator for brownout-driven, energy-efficient scheduling
//! of cloud application components.
//!
//! A run places VMs on a fleet of hosts, replays per-VM demand, and each
//! interval lets a brownout controller deactivate optional application
//! components on power-overloaded hosts before a consolidation strategy
//! migrates VMs and switches idle hosts off.

pub mod brownout;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod placement;
pub mod power;
pub mod registry;
pub mod report;
pub mod simulator;
pub mod sweep;
pub mod workload;

pub use error::{Error, Result};
pub use metrics::{RunSummary, SimulationReport};
pub use simulator::{run, Algorithm, RunConfig};

/// Random generator used everywhere a run draws numbers.
pub type SimRng = rand_chacha::ChaCha8Rng;
