//! Online three-factor learning: layer-local error drives, dual eligibility
//! traces, fast updates, momentum-smoothed consolidation, meta-adaptive
//! multipliers and an optional error-bucket gain table.
//!
//! Every operation works on the current step only; no activity history is
//! stored, so learner memory is independent of how many steps have run.

mod config;
mod learner;
mod meta;
mod reward;
mod rule;

pub use config::{
    ConsolidationMode, LearningRule, PlasticityConfig, RmsScope, TraceMode, UpdateMode,
    WindowAverage,
};
pub use learner::{online_update_step, OnlineLearner, RmsStates, StepOutcome};
pub use meta::{meta_step, MetaState};
pub use reward::{reward_lut_gain, RewardLut};
pub use rule::{
    accumulate_momentum, apply_fast_update, compute_error_drives, consolidate, decay_coefficients,
    hebbian_increment, rms_normalize, update_traces, ErrorDrives, LayerTraces, TraceSet,
};
