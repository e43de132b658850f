use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoders::{Decoder, FrozenSnnDecoder, KalmanDecoder, OnlineSnnDecoder, RandomDriver};
use super::disruption::{apply_disruption, DisruptionSpec};
use super::population::{PopulationConfig, SyntheticPopulation};
use super::task::{ReachTask, TaskConfig, TrialResult};
use crate::baselines::{bptt_train, BpttConfig, KalmanConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plasticity::{LearningRule, PlasticityConfig};
use crate::snn::{Architecture, LifParams, Network};

/// Independent 64-bit stream seed derived from a run seed and a stream tag
/// (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

mod stream {
    pub const POPULATION: u64 = 1;
    pub const DRIVER: u64 = 2;
    pub const PRETRAIN_TARGETS: u64 = 3;
    pub const PRETRAIN_SPIKES: u64 = 4;
    pub const SNN_INIT: u64 = 5;
    pub const BPTT_INIT: u64 = 6;
    pub const BPTT_SHUFFLE: u64 = 7;
    pub const WARMUP_TARGETS: u64 = 8;
    pub const WARMUP_SPIKES: u64 = 9;
    pub const PHASE1_TARGETS: u64 = 10;
    pub const PHASE2_TARGETS: u64 = 11;
    pub const DISRUPTION: u64 = 12;
    pub const KALMAN_INIT: u64 = 13;
    /// Per-decoder spike streams are offset from this base.
    pub const SPIKES: u64 = 100;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub arch: Architecture,
    pub lif: LifParams,
    /// Online learner for the disruption protocol.
    pub plasticity: PlasticityConfig,
    /// Online learner when starting from random weights.
    pub plasticity_nopretrain: PlasticityConfig,
    pub bptt: BpttConfig,
    pub bptt_nopretrain: BpttConfig,
    pub kalman: KalmanConfig,
    pub population: PopulationConfig,
    pub task: TaskConfig,
    pub pretrain_steps: usize,
    /// Fraction of the pretraining log held out for BPTT early stopping.
    pub validation_fraction: f64,
    pub warmup_reaches: usize,
    pub phase1_trials: usize,
    pub phase2_trials: usize,
    pub scratch_trials: usize,
    pub eval_trials: usize,
    pub driver_hidden: usize,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::new(96, 256, 128, 2).expect("valid default architecture"),
            lif: LifParams::default(),
            plasticity: PlasticityConfig {
                rule: LearningRule::Delta,
                ..PlasticityConfig::closed_loop()
            },
            plasticity_nopretrain: PlasticityConfig {
                rule: LearningRule::Delta,
                alpha_mix: 0.8,
                eta_fast0: 3e-6,
                eta_slow0: 3e-5,
                ..PlasticityConfig::closed_loop()
            },
            bptt: BpttConfig::default(),
            bptt_nopretrain: BpttConfig {
                seq_len: 5,
                stride: 5,
                patience: 5,
                ..BpttConfig::default()
            },
            kalman: KalmanConfig::default(),
            population: PopulationConfig::default(),
            task: TaskConfig::default(),
            pretrain_steps: 10_000,
            validation_fraction: 0.15,
            warmup_reaches: 100,
            phase1_trials: 150,
            phase2_trials: 50,
            scratch_trials: 30,
            eval_trials: 70,
            driver_hidden: 32,
        }
    }
}

impl ClosedLoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.lif.validate()?;
        self.plasticity.validate()?;
        self.plasticity_nopretrain.validate()?;
        self.bptt.validate()?;
        self.bptt_nopretrain.validate()?;
        if self.arch.n_in != self.population.n_neurons || self.arch.n_out != 2 {
            return Err(Error::InvalidConfig(format!(
                "architecture {} does not match {} neurons and 2-D velocity",
                self.arch, self.population.n_neurons
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(
                "validation_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Spikes and ideal velocities logged while some decoder drove the cursor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLog {
    spikes: Vec<f64>,
    velocities: Vec<f64>,
    n_channels: usize,
    /// Row index where each reach starts.
    pub trial_starts: Vec<usize>,
    /// Cursor positions alongside the straight-line ideal path, for diagnostics.
    pub path_deviation: Vec<f64>,
}

impl TrialLog {
    pub fn new(n_channels: usize) -> Self {
        Self {
            n_channels,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.velocities.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    fn push(&mut self, spikes: &[f64], v: [f64; 2]) {
        self.spikes.extend_from_slice(spikes);
        self.velocities.extend_from_slice(&v);
    }

    pub fn truncate(&mut self, rows: usize) {
        self.spikes.truncate(rows * self.n_channels);
        self.velocities.truncate(rows * 2);
        self.trial_starts.retain(|&s| s < rows);
        self.path_deviation.truncate(rows);
    }

    pub fn spikes(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.n_channels, self.spikes.clone())
    }

    pub fn velocities(&self) -> Matrix {
        Matrix::from_vec(self.len(), 2, self.velocities.clone())
    }

    /// Rows `[from, to)` as matrices, with trial starts rebased.
    pub fn slice(&self, from: usize, to: usize) -> (Matrix, Matrix, Vec<usize>) {
        let n = self.n_channels;
        let x = Matrix::from_vec(to - from, n, self.spikes[from * n..to * n].to_vec());
        let y = Matrix::from_vec(to - from, 2, self.velocities[from * 2..to * 2].to_vec());
        let breaks = self
            .trial_starts
            .iter()
            .filter(|&&s| s > from && s < to)
            .map(|s| s - from)
            .collect();
        (x, y, breaks)
    }
}

/// One reach. The task must already hold its target; the cursor is
/// recentred. Spikes come from the ideal velocity of each step.
pub fn run_reach_trial(
    decoder: &mut dyn Decoder,
    pop: &SyntheticPopulation,
    task: &mut ReachTask,
    rng: &mut ChaCha8Rng,
) -> Result<TrialResult> {
    run_trial_impl(decoder, pop, task, rng, None, false)
}

fn run_trial_impl(
    decoder: &mut dyn Decoder,
    pop: &SyntheticPopulation,
    task: &mut ReachTask,
    rng: &mut ChaCha8Rng,
    mut log: Option<&mut TrialLog>,
    trajectory: bool,
) -> Result<TrialResult> {
    task.cursor = task.center();
    task.steps = 0;
    let start = task.cursor;
    decoder.begin_trial();
    if let Some(l) = log.as_deref_mut() {
        let rows = l.len();
        l.trial_starts.push(rows);
    }
    let mut rates = vec![0.0; pop.len()];
    let mut spikes = vec![0.0; pop.len()];
    let mut path = trajectory.then(|| vec![task.cursor]);
    let mut success = false;
    while task.steps < task.cfg.max_steps {
        let ideal = task.desired_velocity();
        pop.firing_rates_into(ideal, &mut rates);
        pop.sample_spikes_into(&rates, rng, &mut spikes);
        let v = decoder.step(&spikes, ideal)?;
        if let Some(l) = log.as_deref_mut() {
            l.push(&spikes, ideal);
            l.path_deviation
                .push(line_distance(start, task.target, task.cursor));
        }
        success = task.cursor_update(v);
        if let Some(p) = path.as_mut() {
            p.push(task.cursor);
        }
        if success {
            break;
        }
    }
    Ok(task.result(success, path))
}

/// Distance from `p` to the segment `a`–`b`.
fn line_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Runs `n` reaches with targets from `targets` and spikes from `spikes`.
pub fn run_trials(
    decoder: &mut dyn Decoder,
    pop: &SyntheticPopulation,
    task_cfg: &TaskConfig,
    n: usize,
    targets: &mut ChaCha8Rng,
    spikes: &mut ChaCha8Rng,
    mut log: Option<&mut TrialLog>,
) -> Result<Vec<TrialResult>> {
    let mut task = ReachTask::new(*task_cfg);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        task.new_trial(targets);
        out.push(run_trial_impl(
            decoder,
            pop,
            &mut task,
            spikes,
            log.as_deref_mut(),
            false,
        )?);
    }
    Ok(out)
}

/// Closed-loop log of exactly `n_steps` rows collected while a fixed random
/// recurrent policy drives the cursor; labels are the ideal velocities.
pub fn collect_pretraining_dataset(
    pop: &SyntheticPopulation,
    task_cfg: &TaskConfig,
    n_steps: usize,
    hidden: usize,
    seed: u64,
) -> Result<TrialLog> {
    let mut driver = RandomDriver::new(pop.len(), hidden, &mut rng_for(seed, stream::DRIVER));
    let mut targets = rng_for(seed, stream::PRETRAIN_TARGETS);
    let mut spikes = rng_for(seed, stream::PRETRAIN_SPIKES);
    let mut log = TrialLog::new(pop.len());
    let mut task = ReachTask::new(*task_cfg);
    while log.len() < n_steps {
        task.new_trial(&mut targets);
        run_trial_impl(
            &mut driver,
            pop,
            &mut task,
            &mut spikes,
            Some(&mut log),
            false,
        )?;
    }
    log.truncate(n_steps);
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    OnlineSnn,
    BpttSnn,
    Kalman,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [
        DecoderKind::OnlineSnn,
        DecoderKind::BpttSnn,
        DecoderKind::Kalman,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::OnlineSnn => "online_snn",
            DecoderKind::BpttSnn => "bptt_snn",
            DecoderKind::Kalman => "kalman",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// One reach in a protocol run. `trial` counts from 0 within the decoder's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub decoder: DecoderKind,
    pub phase: u8,
    pub trial: usize,
    pub success: bool,
    pub steps: usize,
    pub time_s: f64,
}

/// Per-trial outcomes of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub seed: u64,
    pub disruption: Option<DisruptionSpec>,
    pub records: Vec<TrialRecord>,
}

impl ProtocolRun {
    /// Times for `decoder` in `phase`, in trial order.
    pub fn times(&self, decoder: DecoderKind, phase: u8) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.decoder == decoder && r.phase == phase)
            .map(|r| r.time_s)
            .collect()
    }

    pub fn timeout_fraction(&self, decoder: DecoderKind, phase: u8) -> f64 {
        let rs: Vec<&TrialRecord> = self
            .records
            .iter()
            .filter(|r| r.decoder == decoder && r.phase == phase)
            .collect();
        rs.iter().filter(|r| !r.success).count() as f64 / rs.len().max(1) as f64
    }
}

fn push_records(
    out: &mut Vec<TrialRecord>,
    seed: u64,
    decoder: DecoderKind,
    phase: u8,
    offset: usize,
    results: &[TrialResult],
) {
    for (i, r) in results.iter().enumerate() {
        out.push(TrialRecord {
            seed,
            decoder,
            phase,
            trial: offset + i,
            success: r.success,
            steps: r.steps,
            time_s: r.time_s,
        });
    }
}

fn train_bptt_on_log(
    cfg: &ClosedLoopConfig,
    bptt: &BpttConfig,
    log: &TrialLog,
    seed: u64,
) -> Result<Network> {
    let mut net = Network::new(cfg.arch, cfg.lif, derive_seed(seed, stream::BPTT_INIT));
    let n = log.len();
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let n_train = n - n_val;
    let (x, y, _) = log.slice(0, n_train);
    let val = (n_val >= 2).then(|| log.slice(n_train, n));
    let seq = bptt.seq_len.min(n_train.max(1));
    let bcfg = BpttConfig {
        seq_len: seq,
        stride: bptt.stride.min(seq),
        ..bptt.clone()
    };
    bptt_train(
        &mut net,
        &x,
        &y,
        val.as_ref().map(|(vx, vy, _)| (vx, vy)),
        &bcfg,
        derive_seed(seed, stream::BPTT_SHUFFLE),
    )?;
    Ok(net)
}

fn spike_rng(seed: u64, phase: u64, decoder: DecoderKind) -> ChaCha8Rng {
    rng_for(seed, stream::SPIKES + 10 * phase + decoder.index())
}

/// Pretrain, evaluate on the intact population, then evaluate again after
/// each disruption in `specs`. Phase 1 is shared: every returned run is
/// identical to running that disruption alone with the same seed.
pub fn run_disruption_protocol(
    cfg: &ClosedLoopConfig,
    specs: &[DisruptionSpec],
    decoders: &[DecoderKind],
    seed: u64,
) -> Result<Vec<ProtocolRun>> {
    cfg.validate()?;
    let pop = SyntheticPopulation::new(&cfg.population, &mut rng_for(seed, stream::POPULATION));

    let needs_log = decoders.iter().any(|d| *d != DecoderKind::OnlineSnn);
    let log = if needs_log {
        Some(collect_pretraining_dataset(
            &pop,
            &cfg.task,
            cfg.pretrain_steps,
            cfg.driver_hidden,
            seed,
        )?)
    } else {
        None
    };

    let mut phase1_records = Vec::new();
    let mut trained = Vec::with_capacity(decoders.len());
    for &kind in decoders {
        let mut dec = match kind {
            DecoderKind::OnlineSnn => {
                let net = Network::new(cfg.arch, cfg.lif, derive_seed(seed, stream::SNN_INIT));
                let mut d = OnlineSnnDecoder::new(net, cfg.plasticity.clone())?;
                run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.warmup_reaches,
                    &mut rng_for(seed, stream::WARMUP_TARGETS),
                    &mut rng_for(seed, stream::WARMUP_SPIKES),
                    None,
                )?;
                AnyDecoder::Online(d)
            }
            DecoderKind::BpttSnn => {
                let log = log.as_ref().expect("pretraining log");
                AnyDecoder::Frozen(FrozenSnnDecoder {
                    net: train_bptt_on_log(cfg, &cfg.bptt, log, seed)?,
                })
            }
            DecoderKind::Kalman => {
                let log = log.as_ref().expect("pretraining log");
                let (x, y, breaks) = log.slice(0, log.len());
                AnyDecoder::Kalman(KalmanDecoder::fit(&x, &y, &breaks, &cfg.kalman)?)
            }
        };
        let res = run_trials(
            &mut dec,
            &pop,
            &cfg.task,
            cfg.phase1_trials,
            &mut rng_for(seed, stream::PHASE1_TARGETS),
            &mut spike_rng(seed, 1, kind),
            None,
        )?;
        push_records(&mut phase1_records, seed, kind, 1, 0, &res);
        trained.push((kind, dec));
    }

    let mut runs = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut disrupted = pop.clone();
        apply_disruption(&mut disrupted, spec, &mut rng_for(seed, stream::DISRUPTION));
        let mut records = phase1_records.clone();
        for (kind, dec) in &trained {
            let mut dec = dec.clone();
            let res = run_trials(
                &mut dec,
                &disrupted,
                &cfg.task,
                cfg.phase2_trials,
                &mut rng_for(seed, stream::PHASE2_TARGETS),
                &mut spike_rng(seed, 2, *kind),
                None,
            )?;
            push_records(&mut records, seed, *kind, 2, cfg.phase1_trials, &res);
        }
        runs.push(ProtocolRun {
            seed,
            disruption: Some(*spec),
            records,
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone)]
enum AnyDecoder {
    Online(OnlineSnnDecoder),
    Frozen(FrozenSnnDecoder),
    Kalman(KalmanDecoder),
}

impl AnyDecoder {
    fn inner(&mut self) -> &mut dyn Decoder {
        match self {
            AnyDecoder::Online(d) => d,
            AnyDecoder::Frozen(d) => d,
            AnyDecoder::Kalman(d) => d,
        }
    }
}

impl Decoder for AnyDecoder {
    fn name(&self) -> &str {
        match self {
            AnyDecoder::Online(d) => d.name(),
            AnyDecoder::Frozen(d) => d.name(),
            AnyDecoder::Kalman(d) => d.name(),
        }
    }

    fn begin_trial(&mut self) {
        self.inner().begin_trial()
    }

    fn step(&mut self, spikes: &[f64], ideal: [f64; 2]) -> Result<[f64; 2]> {
        self.inner().step(spikes, ideal)
    }
}

/// All decoders start untrained and drive `scratch_trials` reaches (only the
/// online SNN learns); the batch decoders are then calibrated on their own
/// logs and everything is evaluated for `eval_trials` reaches.
pub fn run_nopretrain_protocol(
    cfg: &ClosedLoopConfig,
    decoders: &[DecoderKind],
    seed: u64,
) -> Result<ProtocolRun> {
    cfg.validate()?;
    let pop = SyntheticPopulation::new(&cfg.population, &mut rng_for(seed, stream::POPULATION));
    let mut records = Vec::new();
    for &kind in decoders {
        let mut log = TrialLog::new(pop.len());
        let mut targets1 = rng_for(seed, stream::PHASE1_TARGETS);
        let mut spikes1 = spike_rng(seed, 1, kind);
        let mut targets2 = rng_for(seed, stream::PHASE2_TARGETS);
        let mut spikes2 = spike_rng(seed, 2, kind);
        let (p1, p2) = match kind {
            DecoderKind::OnlineSnn => {
                let net = Network::new(cfg.arch, cfg.lif, derive_seed(seed, stream::SNN_INIT));
                let mut d = OnlineSnnDecoder::new(net, cfg.plasticity_nopretrain.clone())?;
                let p1 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.scratch_trials,
                    &mut targets1,
                    &mut spikes1,
                    None,
                )?;
                let p2 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.eval_trials,
                    &mut targets2,
                    &mut spikes2,
                    None,
                )?;
                (p1, p2)
            }
            DecoderKind::BpttSnn => {
                let net = Network::new(cfg.arch, cfg.lif, derive_seed(seed, stream::BPTT_INIT));
                let mut d = FrozenSnnDecoder { net };
                let p1 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.scratch_trials,
                    &mut targets1,
                    &mut spikes1,
                    Some(&mut log),
                )?;
                let mut d = FrozenSnnDecoder {
                    net: train_bptt_on_log(cfg, &cfg.bptt_nopretrain, &log, seed)?,
                };
                let p2 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.eval_trials,
                    &mut targets2,
                    &mut spikes2,
                    None,
                )?;
                (p1, p2)
            }
            DecoderKind::Kalman => {
                let mut d = KalmanDecoder::untrained(
                    pop.len(),
                    &cfg.kalman,
                    &mut rng_for(seed, stream::KALMAN_INIT),
                );
                let p1 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.scratch_trials,
                    &mut targets1,
                    &mut spikes1,
                    Some(&mut log),
                )?;
                let (x, y, breaks) = log.slice(0, log.len());
                let mut d = KalmanDecoder::fit(&x, &y, &breaks, &cfg.kalman)?;
                let p2 = run_trials(
                    &mut d,
                    &pop,
                    &cfg.task,
                    cfg.eval_trials,
                    &mut targets2,
                    &mut spikes2,
                    None,
                )?;
                (p1, p2)
            }
        };
        push_records(&mut records, seed, kind, 1, 0, &p1);
        push_records(&mut records, seed, kind, 2, cfg.scratch_trials, &p2);
    }
    Ok(ProtocolRun {
        seed,
        disruption: None,
        records,
    })
}
