//! Deterministic discrete-event model of a connection-oriented BLE mesh
//! scatternet.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation:
//!
//! - [`channel`]: log-distance RSSI model deciding who hears whom
//! - [`model`]: nodes, clusters, master/slave links and the joining packets
//! - [`join`]: the quality-agnostic baseline and the scored parent selection
//! - [`engine`]: the seeded event loop running one join trial
//! - [`metrics`]: delay, PDR and branch saturation statistics
//! - [`scenario`]: scenario description, validation and generation
//!
//! File formats, the experiment harness and the command line live in the
//! `scatternet` companion crate.
#![no_std]

extern crate alloc;

pub mod channel;
pub mod engine;
mod error;
pub mod join;
pub mod metrics;
pub mod model;
pub mod scenario;

pub use channel::{hears, path_loss_rssi, Position, RadioParams};
pub use engine::{run_trial, Algo, EngineParams, TrialResult};
pub use error::{Error, Result};
pub use join::{
    baseline_select, filter_candidates, score_candidate, select_parent, CandidateInfo,
    FilterThresholds, JoinDecision, ScoreWeights,
};
pub use metrics::{aggregate, compare, AggregateReport, Improvement};
pub use model::{ClusterId, Network, NodeId, NodeState};
pub use scenario::{gen_random_scenario, GenParams, NodeSpec, Scenario};
