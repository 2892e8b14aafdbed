//! Runtime failure prediction for generative action-chunk policies.
//!
//! Two scores are computed at every policy timestep:
//!
//! * an observation novelty score from random network distillation over the
//!   policy's observation embedding ([`rnd`]), and
//! * an action uncertainty score, the binned entropy of a batch of sampled
//!   action chunks ([`ace`]).
//!
//! Each is summed over a sliding window ([`aggregate`]), compared with a
//! threshold calibrated by conformal prediction on successful rollouts
//! ([`calibrate`]), and the two decisions are combined with a logical AND
//! ([`detect`]). [`eval`] computes detection metrics and runs parameter
//! sweeps; [`synth`] generates synthetic rollouts for desk-scale testing.

pub mod ace;
pub mod aggregate;
pub mod calibrate;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod nn;
pub mod par;
pub mod rnd;
pub mod stamp;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
