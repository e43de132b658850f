use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::BinnedDataset;
use super::metrics::evaluate_stream;
use crate::baselines::{sequence_starts, CurvePoint};
use crate::error::{check_len, Error, Result};
use crate::plasticity::{
    online_update_step, LearningRule, OnlineLearner, PlasticityConfig, RmsScope, TraceMode,
    UpdateMode,
};
use crate::snn::{Architecture, Network, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineMode {
    /// Overlapping fixed-length sequences, state reset per sequence.
    #[default]
    Batched,
    /// One chronological stream with persistent state.
    Timestepwise,
}

impl FromStr for OfflineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batched" => Ok(Self::Batched),
            "timestepwise" => Ok(Self::Timestepwise),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected batched or timestepwise)"
            ))),
        }
    }
}

impl fmt::Display for OfflineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Batched => "batched",
            Self::Timestepwise => "timestepwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    pub mode: OfflineMode,
    pub epochs: usize,
    pub seq_len: usize,
    pub stride: usize,
    /// Timestep-wise state reset period when the data has no trial boundaries.
    pub reset_every: usize,
    /// Shuffle sequence order each epoch (batched mode).
    pub shuffle: bool,
    pub patience: usize,
    /// Extra validation points every this many training timesteps.
    pub eval_every_samples: Option<usize>,
    /// Stop after this many training timesteps.
    pub max_samples: Option<usize>,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            mode: OfflineMode::Batched,
            epochs: 5,
            seq_len: 10,
            stride: 5,
            reset_every: 200,
            shuffle: true,
            patience: 3,
            eval_every_samples: None,
            max_samples: None,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.stride == 0 || self.reset_every == 0 {
            return Err(Error::InvalidConfig(
                "seq_len, stride and reset_every must be >= 1".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.eval_every_samples == Some(0) {
            return Err(Error::InvalidConfig(
                "eval_every_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    /// Starts with the untrained evaluation at epoch 0.
    pub curve: Vec<CurvePoint>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Validation R of the returned (best) weights.
    pub r_x: f64,
    pub r_y: f64,
}

struct Evaluator<'a> {
    val: &'a BinnedDataset,
    best: Option<(f64, Weights, usize)>,
    since_best: usize,
}

/// Trains `net` with the online rule on `train`, scoring on `val` by the
/// mean of the per-axis R. Keeps the best epoch's weights.
pub fn train_offline(
    net: &mut Network,
    learner: &mut OnlineLearner,
    train: &BinnedDataset,
    val: &BinnedDataset,
    cfg: &OfflineConfig,
    seed: u64,
) -> Result<OfflineReport> {
    cfg.validate()?;
    check_len("offline input width", net.arch.n_in, train.n_channels())?;
    check_len("offline validation width", net.arch.n_in, val.n_channels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rx, ry) = evaluate_stream(net, &val.x, &val.y)?;
    let mut report = OfflineReport {
        curve: vec![CurvePoint {
            epoch: 0,
            batches: 0,
            samples: 0,
            train_loss: f64::NAN,
            val_r_x: rx,
            val_r_y: ry,
        }],
        best_epoch: None,
        stopped_early: false,
        r_x: rx,
        r_y: ry,
    };
    let mut ev = Evaluator {
        val,
        best: None,
        since_best: 0,
    };
    let mut samples = 0usize;
    let mut sequences = 0usize;
    let budget = cfg.max_samples.unwrap_or(usize::MAX);

    'epochs: for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut step = |net: &mut Network,
                        learner: &mut OnlineLearner,
                        t: usize,
                        samples: &mut usize,
                        report: &mut OfflineReport,
                        sequences: usize|
         -> Result<()> {
            let out = online_update_step(net, learner, train.x.row(t), train.y.row(t))?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: sequences,
                });
            }
            loss_sum += out.loss;
            loss_n += 1;
            *samples += 1;
            if cfg.eval_every_samples.is_some_and(|k| *samples % k == 0) {
                let (rx, ry) = evaluate_stream(net, &val.x, &val.y)?;
                report.curve.push(CurvePoint {
                    epoch,
                    batches: sequences,
                    samples: *samples,
                    train_loss: loss_sum / loss_n as f64,
                    val_r_x: rx,
                    val_r_y: ry,
                });
            }
            Ok(())
        };
        match cfg.mode {
            OfflineMode::Batched => {
                let mut starts = sequence_starts(train.len(), cfg.seq_len, cfg.stride);
                if cfg.shuffle {
                    starts.shuffle(&mut rng);
                }
                for s in starts {
                    if samples + cfg.seq_len > budget {
                        break 'epochs;
                    }
                    net.reset_state();
                    sequences += 1;
                    for t in s..s + cfg.seq_len {
                        step(net, learner, t, &mut samples, &mut report, sequences)?;
                    }
                }
            }
            OfflineMode::Timestepwise => {
                net.reset_state();
                let mut boundaries = train.trial_boundaries.iter().peekable();
                let mut since_reset = 0;
                for t in 0..train.len() {
                    if samples >= budget {
                        break 'epochs;
                    }
                    let at_boundary = boundaries.peek().is_some_and(|&&b| b == t);
                    if at_boundary {
                        boundaries.next();
                    }
                    let periodic =
                        train.trial_boundaries.is_empty() && since_reset == cfg.reset_every;
                    if at_boundary || periodic {
                        net.reset_state();
                        since_reset = 0;
                        sequences += 1;
                    }
                    step(net, learner, t, &mut samples, &mut report, sequences)?;
                    since_reset += 1;
                }
            }
        }
        let train_loss = if loss_n > 0 {
            loss_sum / loss_n as f64
        } else {
            f64::NAN
        };
        if end_of_epoch(
            net,
            &mut ev,
            &mut report,
            epoch,
            sequences,
            samples,
            train_loss,
            cfg.patience,
        )? {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, w, epoch)) = ev.best.take() {
        net.weights = w;
        report.best_epoch = Some(epoch);
        let (rx, ry) = evaluate_stream(net, &val.x, &val.y)?;
        report.r_x = rx;
        report.r_y = ry;
    }
    Ok(report)
}

/// Records the epoch point and updates early stopping; returns true to stop.
#[allow(clippy::too_many_arguments)]
fn end_of_epoch(
    net: &Network,
    ev: &mut Evaluator<'_>,
    report: &mut OfflineReport,
    epoch: usize,
    sequences: usize,
    samples: usize,
    train_loss: f64,
    patience: usize,
) -> Result<bool> {
    let (rx, ry) = evaluate_stream(net, &ev.val.x, &ev.val.y)?;
    report.curve.push(CurvePoint {
        epoch,
        batches: sequences,
        samples,
        train_loss,
        val_r_x: rx,
        val_r_y: ry,
    });
    let score = 0.5 * (rx + ry);
    if ev.best.as_ref().map_or(true, |(b, _, _)| score > *b) {
        ev.best = Some((score, net.weights.clone(), epoch));
        ev.since_best = 0;
        Ok(false)
    } else {
        ev.since_best += 1;
        Ok(ev.since_best >= patience)
    }
}

/// Learning-rule variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Default configuration.
    Full,
    Delta,
    Feedforward,
    RmsFull,
    RmsPartial,
    RmsNone,
    FastTrace,
    SlowTrace,
    MediumTrace,
    DualTrace,
    FastOnly,
    SlowOnly,
    Dual,
    Frozen,
    Meta,
    NoMeta,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 16] = [
        Self::Full,
        Self::Delta,
        Self::Feedforward,
        Self::RmsFull,
        Self::RmsPartial,
        Self::RmsNone,
        Self::FastTrace,
        Self::SlowTrace,
        Self::MediumTrace,
        Self::DualTrace,
        Self::FastOnly,
        Self::SlowOnly,
        Self::Dual,
        Self::Frozen,
        Self::Meta,
        Self::NoMeta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Delta => "delta",
            Self::Feedforward => "feedforward",
            Self::RmsFull => "rms_full",
            Self::RmsPartial => "rms_partial",
            Self::RmsNone => "rms_none",
            Self::FastTrace => "fast_trace",
            Self::SlowTrace => "slow_trace",
            Self::MediumTrace => "medium_trace",
            Self::DualTrace => "dual_trace",
            Self::FastOnly => "fast_only",
            Self::SlowOnly => "slow_only",
            Self::Dual => "dual",
            Self::Frozen => "frozen",
            Self::Meta => "meta",
            Self::NoMeta => "no_meta",
        }
    }

    /// Applies the variant on top of a base architecture and rule.
    pub fn apply(self, arch: &mut Architecture, cfg: &mut PlasticityConfig) {
        match self {
            Self::Full => {}
            Self::Delta => cfg.rule = LearningRule::Delta,
            Self::Feedforward => arch.recurrent = false,
            Self::RmsFull => cfg.rms = RmsScope::Full,
            Self::RmsPartial => cfg.rms = RmsScope::Partial,
            Self::RmsNone => cfg.rms = RmsScope::None,
            Self::FastTrace => cfg.traces = TraceMode::FastOnly,
            Self::SlowTrace => cfg.traces = TraceMode::SlowOnly,
            Self::MediumTrace => cfg.traces = TraceMode::Medium,
            Self::DualTrace => cfg.traces = TraceMode::Dual,
            Self::FastOnly => cfg.updates = UpdateMode::FastOnly,
            Self::SlowOnly => cfg.updates = UpdateMode::SlowOnly,
            Self::Dual => cfg.updates = UpdateMode::Dual,
            Self::Frozen => cfg.updates = UpdateMode::Frozen,
            Self::Meta => cfg.meta = true,
            Self::NoMeta => cfg.meta = false,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub r_x: f64,
    pub r_y: f64,
}

/// Base settings shared by every ablation job.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSetup {
    pub arch: Architecture,
    pub lif: crate::snn::LifParams,
    pub plasticity: PlasticityConfig,
    pub offline: OfflineConfig,
}

/// Trains each variant from the same seeded initial weights and reports
/// validation R of the best epoch.
pub fn run_ablation(
    setup: &AblationSetup,
    variants: &[AblationVariant],
    train: &BinnedDataset,
    val: &BinnedDataset,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("no ablation variants given".into()));
    }
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &variant in variants {
        for &seed in seeds {
            let mut arch = setup.arch;
            let mut pc = setup.plasticity.clone();
            variant.apply(&mut arch, &mut pc);
            let mut net = Network::new(arch, setup.lif, seed);
            let mut learner = OnlineLearner::new(&net, pc)?;
            let report = train_offline(&mut net, &mut learner, train, val, &setup.offline, seed)?;
            rows.push(AblationRow {
                variant,
                seed,
                r_x: report.r_x,
                r_y: report.r_y,
            });
        }
    }
    Ok(rows)
}
