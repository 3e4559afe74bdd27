//! Real-time soft actor-critic engine for fast locomotion learning.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: dense networks with exact gradients, LayerNorm, dropout and Adam.
//! * [`replay`]: fixed-capacity FIFO transition store.
//! * [`sac`]: soft actor-critic with critic ensembles (SAC, REDQ, DroQ and
//!   the LayerNorm-only / dropout-only variants) at configurable update-to-data
//!   ratio.
//! * [`envs`]: PD-controlled planar walker and a pendulum spin task sharing the
//!   velocity-interval reward.
//! * [`runtime`]: synchronous per-control-step training loop, fused critic
//!   updates and throughput accounting.
//! * [`harness`]: run configuration, seed sweeps, ablation suites, learning
//!   curves and plot scripts.

pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod runtime;
pub mod sac;

pub use error::{Error, Result};
