//! Delay-Doppler channel prediction lab.
//!
//! Generates rapidly time-varying wireless channels (sum-of-sinusoids Jakes
//! fading over a sparse tap-delay line), fits complex-exponential basis
//! expansions, and trains a physics-aware transformer predictor that fuses
//! historical channel coefficients with mobility descriptors (max Doppler,
//! velocity, SNR). Ships classical baselines (temporal-mixing MLP, linear AR,
//! persistence) and an evaluation harness for NMSE-vs-velocity and
//! NMSE-vs-horizon sweeps.

pub mod baselines;
pub mod chansim;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
