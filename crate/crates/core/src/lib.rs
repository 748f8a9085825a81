//! Iterative magnitude pruning of fully connected ReLU networks, with
//! learning-rate schedules that adapt their peak to the pruning cycle.
//!
//! The crate covers the network and its analytic gradients ([`nn`]),
//! optimizers ([`optim`]), schedules including the S-shaped cyclical rule
//! ([`sched`]), pruning criteria ([`prune`]), distribution instrumentation
//! ([`instrument`]), datasets ([`data`]), the experiment harness and oracle
//! search ([`harness`]), config files ([`config`]) and artifacts ([`report`]).

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod instrument;
pub mod nn;
pub mod optim;
pub mod prune;
pub mod report;
pub mod sched;

pub use error::{Error, Result};
pub use harness::{CycleRecord, Experiment, ExperimentConfig};
pub use nn::Network;
pub use sched::{SCycParams, ScheduleSpec};
