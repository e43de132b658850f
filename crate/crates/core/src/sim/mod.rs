//! Closed-loop cursor simulation: a cosine-tuned Poisson population, a
//! centre-out reach task, disruptions and the decoders that drive the cursor.

mod decoders;
mod disruption;
mod population;
mod protocol;
mod task;

pub use decoders::{
    Decoder, FrozenSnnDecoder, KalmanDecoder, OnlineSnnDecoder, OracleDecoder, RandomDriver,
    ZeroDecoder,
};
pub use disruption::{
    apply_disruption, apply_drift, apply_dropout, apply_remap, floyd_sample, DisruptionKind,
    DisruptionSpec,
};
pub use population::{PopulationConfig, SyntheticPopulation};
pub use protocol::{
    collect_pretraining_dataset, derive_seed, run_disruption_protocol, run_nopretrain_protocol,
    run_reach_trial, run_trials, ClosedLoopConfig, DecoderKind, ProtocolRun, TrialLog, TrialRecord,
};
pub use task::{ReachTask, TaskConfig, TrialResult};
