//! Metrics, the memory model, dataset and result formats, checkpoints and
//! offline training orchestration.

pub mod checkpoint;
pub mod dataset;
pub mod memory;
pub mod metrics;
pub mod offline;
pub mod results;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use dataset::{make_synthetic_offline_dataset, BinnedDataset, DatasetHeader, SyntheticConfig};
pub use memory::{
    linear_fit, measure_training_memory, memory_model, param_count, to_mb, MeasuredMemory,
    MemoryReport,
};
pub use metrics::{
    axis_r, evaluate_stream, mean_sem, median, pearson_r, pearson_r_or_zero, predict_stream,
    rolling_mean, time_to_target_stats, TimeStats,
};
pub use offline::{
    run_ablation, train_offline, AblationRow, AblationSetup, AblationVariant, OfflineConfig,
    OfflineMode, OfflineReport,
};
pub use results::{
    ablation_csv, config_hash, curve_csv, memory_csv, trials_csv, RunSummary, ABLATION_HEADER,
    CURVE_HEADER, MEMORY_HEADER, TRIALS_HEADER,
};
