//! Joint sensing-node selection and power allocation for tracking
//! maneuvering targets in a perceptive mobile network.
//!
//! The pipeline per frame is: predict each target, build its prior
//! information, then alternate between per-target node selection
//! ([`mm_admm`], [`dan`], or a [`baselines`] selector) and joint power
//! allocation ([`power`]) before an EKF update ([`tracker`]).

pub mod baselines;
pub mod config;
pub mod dan;
pub mod error;
pub mod fisher;
pub mod instances;
pub mod linalg;
pub mod mm_admm;
pub mod power;
pub mod scenario;
pub mod seeds;
pub mod tracker;

pub use error::{Error, Result};
