//! Tiered KV-cache storage with utility-driven compression planning.
//!
//! The library models a memory hierarchy (DRAM, SSD, ...) holding reusable
//! LLM KV caches. For every cached context it jointly picks a compression
//! method, a compression rate, and a placement tier by maximizing a utility
//! that trades answer quality against time-to-first-token, subject to the
//! capacity of each tier. A trace-driven simulator replays request logs
//! against the planner and against fixed-compression LRU baselines.

pub mod codecs;
pub mod engine;
pub mod error;
pub mod model;
pub mod policy;
pub mod profiler;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
