//! Hybrid parallel strategy planning for Mixture-of-Experts inference.
//!
//! The crate decomposes an MoE transformer layer into an Attention module
//! and an Expert module, estimates per-strategy latency for each, and picks
//! the attention layout plus separate prefill and decode expert layouts that
//! minimise end-to-end latency, including the cost of switching expert
//! layouts between the two stages.

pub mod comm;
pub mod config;
pub mod cost;
pub mod error;
pub mod model;
pub mod planner;
pub mod simulator;
pub mod strategy;
pub mod transition;

pub use error::{Error, Result};
