//! Comparison decoders: a velocity-state Kalman filter and a BPTT-trained
//! copy of the spiking network.

mod adam;
mod bptt;
mod kalman;

pub use adam::{adam_step, AdamState};
pub use bptt::{
    bptt_train, sequence_loss, sequence_loss_and_grad, sequence_starts, Activation, BpttConfig,
    BpttReport, CurvePoint, MemoryMeter, ResetGradient,
};
pub use kalman::{kf_fit, kf_fit_segments, kf_step, KalmanConfig, KalmanModel};
