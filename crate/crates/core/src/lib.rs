//! A deterministic, desk-scale arena for evaluating desktop computer-control
//! agents.
//!
//! The crate is organised around the episode loop:
//!
//! * [`taskspec`] parses and validates task definitions.
//! * [`envsim`] is the simulated desktop (device state, app models, hit-testing).
//! * [`actions`] parses the restricted `computer.*` action language and runs it.
//! * [`observe`] builds set-of-marks screens and the agent-facing observation.
//! * [`evaluate`] turns a final device state into a reward.
//! * [`agent`] assembles prompts, parses responses and runs episodes.
//! * [`orchestrate`] partitions suites across workers and serves the bridge protocol.
//! * [`corpus`] ships the embedded task corpus, app models and oracle scripts.

pub mod actions;
pub mod agent;
pub mod canonical;
pub mod corpus;
pub mod envsim;
pub mod evaluate;
pub mod geom;
mod lexer;
pub mod observe;
pub mod orchestrate;
pub mod taskspec;

pub use geom::{Point, Rect};
pub use lexer::Literal;
