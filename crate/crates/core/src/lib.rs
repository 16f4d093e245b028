//! Simulator and verification harness for a strictly-stabilizing
//! asynchronous unison protocol on chains and rings.
//!
//! Every processor keeps a single clock. Correct processors run ten guarded
//! commands ([`rules`]); at most one processor may be crashed or Byzantine
//! ([`adversary`]). A daemon ([`scheduler`]) decides who moves, the
//! [`engine`] records a deterministic [`trace::Trace`], and [`analysis`]
//! evaluates unison, islands and drift over it.

pub mod adversary;
pub mod analysis;
pub mod checks;
pub mod engine;
mod error;
pub mod model;
pub mod rules;
pub mod scenarios;
pub mod scheduler;
pub mod trace;

pub use error::{Error, Result};
pub use model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology, TopologyKind};
pub use rules::{Rule, RuleSet};
