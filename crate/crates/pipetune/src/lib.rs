//! Simulation and optimization of multi-stage online data-ingestion
//! pipelines for recommender-model training.
//!
//! The crate has five parts:
//!
//! - [`model`]: deterministic, seedable analytical pipeline model mapping
//!   (pipeline, allocation, machine, workload) to throughput and memory.
//! - [`env`]: the RL environment over the model — normalized state,
//!   multi-discrete incremental actions with feasibility masks, resize
//!   schedules, OOM downtime, and the throughput-times-free-memory reward.
//! - [`agent`] / [`mlp`]: a from-scratch DQN (three-layer MLP, replay
//!   buffer, target network) with offline pretraining and online
//!   fine-tuning.
//! - [`alloc`]: baseline and oracle allocation policies for comparison.
//! - [`harness`] / [`config`]: the experiment runner behind the `pipetune`
//!   CLI — seeded runs, CSV metrics, comparisons, and scaling studies.

pub mod agent;
pub mod alloc;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod mlp;
pub mod model;

pub use error::{Error, Result};
