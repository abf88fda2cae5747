//! Closed-loop road-following testbed.
//!
//! The crate wires a synthetic camera world ([`scene`]) into a small
//! differentiable lane regressor ([`perception`]) and a proportional
//! steering controller ([`control`]). Attack injectors ([`attacks`]) hook
//! into the pipeline at fixed edges, the [`protocol`] module runs the
//! 13-second baseline/attack trials and writes frame-level CSV logs, and
//! [`metrics`] turns those logs into three-dimensional fingerprints.

pub mod attacks;
pub mod control;
pub mod error;
pub mod metrics;
pub mod perception;
pub mod protocol;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
