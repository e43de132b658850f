//! Online-adaptive spiking neural network decoding for intracortical
//! brain-computer interfaces.
//!
//! The crate contains the spiking decoder and its local learning rule, the
//! homeostatic normalizers it relies on, baseline decoders (Kalman filter and
//! a backpropagation-through-time trained SNN), a synthetic closed-loop
//! center-out reaching environment, and the experiment harness.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod homeostasis;
pub mod linalg;
pub mod plasticity;
pub mod sim;
pub mod snn;

pub use error::{Error, Result};
