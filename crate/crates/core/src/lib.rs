//! Generalized play hysteresis, Krasnosel'skii-Pokrovskii superpositions and
//! inversion-free feedforward compensation.

// `!(x < y)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod curves;
pub mod error;
pub mod kp_model;
pub mod play;
pub mod plot;
pub mod signals;
pub mod simulator;
pub mod verification;

pub use curves::{Extension, PiecewiseLinearCurve, Preimage};
pub use error::{Error, Result};
pub use kp_model::{InitialMemory, KpModel, PlayElement};
pub use play::GeneralizedPlay;
pub use signals::SignalSpec;
pub use simulator::{simulate, SimConfig, Trace};
