//! Lie-group equivariant and invariant layers for complex RF signals, a
//! multipath channel simulator, a synthetic device-fingerprint dataset and a
//! training harness.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod fingerprint;
pub mod io;
pub mod layers;
pub mod liegroup;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
